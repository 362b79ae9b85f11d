//! Numerical laboratory for the su(N) quantization of two-dimensional Euler
//! flow on the sphere and the flat torus.
//!
//! The crate builds the spherical-matrix basis `T^N_{l,m}` of su(N), evaluates
//! the continuous (Poisson) and quantized (commutator) structure constants and
//! their difference, integrates the quantized Euler equations isospectrally,
//! samples the Gaussian enstrophy measure, and evaluates closed-form and
//! Monte-Carlo estimates of the quantization remainder in negative Sobolev
//! norms, together with the decay-rate envelopes those estimates obey.
//!
//! Heavy sweeps are data-parallel through `rayon` behind the default
//! `parallel` feature; disabling it yields a dependency-light sequential
//! build with identical results.

pub mod basis;
pub mod dynamics;
pub mod measures;
pub(crate) mod par;
pub mod remainder;
pub mod structconst;
pub mod wigner;

pub use basis::{BasisSet, QuantizedField, SmoothField};
pub use remainder::{RateReport, RemainderCoeffs};
pub use structconst::{BracketScale, StructureTable, TripleIndex};
pub use wigner::HalfInt;
