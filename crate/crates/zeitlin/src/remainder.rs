//! Defect between the scaled matrix commutator and the band-projected
//! Poisson bracket: per-coefficient kernels, expected squared Sobolev norms
//! under white noise on sphere and torus, Monte Carlo cross-checks, and
//! decay-rate reports across truncation levels.
//!
//! Every per-m defect coefficient factors through its degree triple:
//! c = 2 (-1)^(mbar+1) sqrt((2l+1)(2l'+1)(2lbar+1)) 3j(l l' lbar; m m' -mbar)
//! K(N; l, l', lbar), with K the exact triangle-coefficient difference from
//! `structconst::delta_k`. Second moments therefore collapse, m-sums first,
//! from O(N^5) index sextuples to an O(N^3) sum over degree triples; both
//! routes are implemented and must agree.

use std::io::{self, Write};

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::QuantizedField;
use crate::measures::{sample_field, sample_rng, STREAM_MU};
use crate::par;
use crate::structconst::{self, BracketScale, StructError, TripleIndex};
use crate::wigner;

/// RNG stream for torus lattice sampling (sphere sampling reuses the
/// shared ensemble stream from `measures`).
pub const STREAM_TORUS: u64 = 4;

/// Validation headroom above the least-squares envelope constant.
const ENVELOPE_SLACK: f64 = 1.25;

/// Errors from remainder kernels, Monte Carlo estimators, and rate sweeps.
#[derive(Debug, Error)]
pub enum RemainderError {
    /// Field level does not match the kernel level.
    #[error("field level {field} does not match kernel level {kernel}")]
    LevelMismatch { kernel: u32, field: u32 },
    /// Parameter outside the documented domain.
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    /// Structure-constant evaluation failed.
    #[error(transparent)]
    Struct(#[from] StructError),
}

/// One ordered degree triple with its exact kernel difference.
#[derive(Clone, Copy, Debug)]
pub struct TripleDefect {
    /// Degree of the inverse-Laplacian leg.
    pub l: i32,
    /// Degree of the plain leg.
    pub lp: i32,
    /// Output degree.
    pub lbar: i32,
    /// Triangle-coefficient difference from `structconst::delta_k`.
    pub delta: f64,
}

/// Laplacian eigenvalue magnitude l(l+1).
fn lam(l: i32) -> f64 {
    f64::from(l * (l + 1))
}

/// Sign (-1)^(mbar+1) entering every per-m defect coefficient.
fn mbar_sign(mbar: i32) -> f64 {
    if mbar.rem_euclid(2) == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Dimension prefactor sqrt((2l+1)(2l'+1)(2lbar+1)).
fn dim_factor(l: i32, lp: i32, lbar: i32) -> f64 {
    (f64::from(2 * l + 1) * f64::from(2 * lp + 1) * f64::from(2 * lbar + 1)).sqrt()
}

fn check_exponent(kappa: f64) -> Result<(), RemainderError> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(RemainderError::BadParameter(format!(
            "decay exponent must be positive and finite, got {kappa}"
        )));
    }
    Ok(())
}

fn check_count(count: usize) -> Result<(), RemainderError> {
    if count < 100 {
        return Err(RemainderError::BadParameter(format!(
            "Monte Carlo needs at least 100 samples, got {count}"
        )));
    }
    Ok(())
}

/// Defect kernel at one level: every ordered admissible degree triple with
/// its exact kernel difference, sharded by output degree. Per-m coefficients
/// are produced on demand and never stored, so memory stays O(N^3).
#[derive(Clone, Debug)]
pub struct RemainderCoeffs {
    n: u32,
    scale: BracketScale,
    shards: Vec<Vec<TripleDefect>>,
}

impl RemainderCoeffs {
    /// Builds the kernel for level `n` with the given commutator scale.
    pub fn build(n: u32, scale: BracketScale) -> Result<Self, RemainderError> {
        if n < 2 {
            return Err(RemainderError::BadParameter(format!(
                "level must be at least 2, got {n}"
            )));
        }
        let lmax = n as i32 - 1;
        let triples = structconst::admissible_triples(lmax);
        let defects = par::map_range(triples.len(), |i| {
            let (l, lp, lbar) = triples[i];
            TripleDefect { l, lp, lbar, delta: structconst::delta_k(n, l, lp, lbar, scale) }
        });
        let mut shards = vec![Vec::new(); lmax as usize];
        for d in defects {
            shards[(d.lbar - 1) as usize].push(d);
        }
        Ok(Self { n, scale, shards })
    }

    /// Level the kernel was built for.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Commutator scale folded into the discrete term.
    pub fn scale(&self) -> BracketScale {
        self.scale
    }

    /// Triples with output degree `lbar`, ordered by (l, l').
    pub fn shard(&self, lbar: i32) -> &[TripleDefect] {
        &self.shards[(lbar - 1) as usize]
    }

    /// Number of stored degree triples across all shards.
    pub fn triple_count(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    /// Per-coefficient defect (continuous minus discrete constant) at one
    /// index sextuple; zero off the admissible set or outside the band.
    pub fn entry(&self, idx: &TripleIndex) -> f64 {
        let lmax = self.n as i32 - 1;
        if !idx.is_admissible() || idx.degree_sum() % 2 == 0 {
            return 0.0;
        }
        if idx.l > lmax || idx.lp > lmax || idx.lbar > lmax {
            return 0.0;
        }
        let shard = self.shard(idx.lbar);
        let Ok(pos) = shard.binary_search_by(|d| (d.l, d.lp).cmp(&(idx.l, idx.lp))) else {
            return 0.0;
        };
        let tj = wigner::three_j_raw(
            2 * idx.l,
            2 * idx.lp,
            2 * idx.lbar,
            2 * idx.m,
            2 * idx.mp,
            -2 * idx.mbar,
        );
        2.0 * mbar_sign(idx.mbar) * dim_factor(idx.l, idx.lp, idx.lbar) * tj * shard[pos].delta
    }

    /// Remainder field of one sample: the scaled commutator term minus the
    /// band-projected Poisson term, with the inverse-Laplacian leg folded in
    /// as psi_{l,m} = -w_{l,m} / l(l+1).
    pub fn remainder_field(&self, w: &QuantizedField) -> Result<QuantizedField, RemainderError> {
        if w.n() != self.n {
            return Err(RemainderError::LevelMismatch { kernel: self.n, field: w.n() });
        }
        let lmax = self.n as i32 - 1;
        let shard_sums: Vec<Vec<Complex<f64>>> = par::map_range(lmax as usize, |li| {
            let lbar = li as i32 + 1;
            let mut acc = vec![Complex::new(0.0, 0.0); (2 * lbar + 1) as usize];
            for d in self.shard(lbar) {
                let dims = dim_factor(d.l, d.lp, lbar);
                for m in -d.l..=d.l {
                    let wa = w.coeff(d.l, m);
                    if wa.norm_sqr() == 0.0 {
                        continue;
                    }
                    let lead = Complex::new(0.0, 1.0) * wa / lam(d.l);
                    let lo = (-d.lp).max(-lbar - m);
                    let hi = d.lp.min(lbar - m);
                    for mp in lo..=hi {
                        let mbar = m + mp;
                        let tj = wigner::three_j_raw(
                            2 * d.l,
                            2 * d.lp,
                            2 * lbar,
                            2 * m,
                            2 * mp,
                            -2 * mbar,
                        );
                        if tj == 0.0 {
                            continue;
                        }
                        let c = 2.0 * mbar_sign(mbar) * dims * tj * d.delta;
                        acc[(mbar + lbar) as usize] += lead * w.coeff(d.lp, mp) * c;
                    }
                }
            }
            acc
        });
        let mut out = QuantizedField::zero(self.n);
        for (li, acc) in shard_sums.iter().enumerate() {
            let lbar = li as i32 + 1;
            for mbar in 0..=lbar {
                let z = acc[(mbar + lbar) as usize];
                let partner = acc[(lbar - mbar) as usize];
                let twin = if mbar % 2 == 0 { partner } else { -partner };
                debug_assert!(
                    (z.conj() - twin).norm() <= 1e-10 * (1.0 + z.norm()),
                    "remainder coefficients violate the conjugation constraint"
                );
                let z = if mbar == 0 { Complex::new(z.re, 0.0) } else { z };
                out.set_mode(lbar, mbar, z);
            }
        }
        Ok(out)
    }

    /// Expected squared H^{-kappa} norm of the remainder field under the
    /// unit white-noise ensemble, by the m-collapsed triple sum
    /// sum 2 (2l+1)(2l'+1)(2lbar+1) lam(lbar)^{-kappa} K^2 (1/lam(l)-1/lam(l'))^2.
    /// The ensemble-mean term vanishes identically (the alternating m-sum
    /// collapse); its roundoff residual grows with the level through the
    /// top-degree prefactors, so it is only required to be negligible
    /// squared against the retained sum.
    pub fn expected_remainder_sq(&self, kappa: f64) -> Result<f64, RemainderError> {
        check_exponent(kappa)?;
        let residual = self.first_wick_residual();
        let mut total = 0.0;
        for lbar in 1..=(self.n as i32 - 1) {
            let shard = self.shard(lbar);
            let weight = lam(lbar).powf(-kappa);
            let terms: Vec<f64> = par::slice_iter(shard)
                .map(|d| {
                    if d.l == d.lp {
                        return 0.0;
                    }
                    let inv = 1.0 / lam(d.l) - 1.0 / lam(d.lp);
                    let dims =
                        f64::from(2 * d.l + 1) * f64::from(2 * d.lp + 1) * f64::from(2 * lbar + 1);
                    2.0 * dims * d.delta * d.delta * inv * inv
                })
                .collect();
            total += weight * terms.iter().sum::<f64>();
        }
        assert!(
            residual * residual <= 1e-10 * total.max(f64::MIN_POSITIVE),
            "mean remainder term failed to collapse: residual {residual:e} against sum {total:e}"
        );
        Ok(total)
    }

    /// The same expectation by the O(N^5) per-m sum
    /// sum lam(lbar)^{-kappa} (1/2) c^2 (1/lam(l)-1/lam(l'))^2 over every
    /// admissible index sextuple; independent cross-check of the collapse.
    pub fn expected_remainder_sq_per_m(&self, kappa: f64) -> Result<f64, RemainderError> {
        check_exponent(kappa)?;
        let mut total = 0.0;
        for lbar in 1..=(self.n as i32 - 1) {
            let shard = self.shard(lbar);
            let weight = lam(lbar).powf(-kappa);
            let terms = par::map_range(shard.len(), |i| {
                let d = shard[i];
                if d.l == d.lp {
                    return 0.0;
                }
                let inv = 1.0 / lam(d.l) - 1.0 / lam(d.lp);
                let dims = dim_factor(d.l, d.lp, lbar);
                let mut acc = 0.0;
                for m in -d.l..=d.l {
                    let lo = (-d.lp).max(-lbar - m);
                    let hi = d.lp.min(lbar - m);
                    for mp in lo..=hi {
                        let mbar = m + mp;
                        let tj = wigner::three_j_raw(
                            2 * d.l,
                            2 * d.lp,
                            2 * lbar,
                            2 * m,
                            2 * mp,
                            -2 * mbar,
                        );
                        let c = 2.0 * mbar_sign(mbar) * dims * tj * d.delta;
                        acc += 0.5 * c * c * inv * inv;
                    }
                }
                acc
            });
            total += weight * terms.iter().sum::<f64>();
        }
        Ok(total)
    }

    /// Largest magnitude over output modes of the ensemble-mean remainder
    /// coefficient: the diagonal l = l' contraction with alternating signs,
    /// which collapses to zero for every output degree >= 1.
    pub fn first_wick_residual(&self) -> f64 {
        let lmax = self.n as i32 - 1;
        let sums = par::map_range(lmax as usize, |li| {
            let lbar = li as i32 + 1;
            let shard = self.shard(lbar);
            par::sum_range(shard.len(), |i| {
                let d = shard[i];
                if d.l != d.lp {
                    return 0.0;
                }
                let pref = -2.0 * dim_factor(d.l, d.l, lbar) * d.delta / lam(d.l);
                (-d.l..=d.l)
                    .map(|m| {
                        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                        sign * pref
                            * wigner::three_j_raw(2 * d.l, 2 * d.l, 2 * lbar, 2 * m, -2 * m, 0)
                    })
                    .sum()
            })
            .abs()
        });
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Partial sums of the collapsed expectation split at the degree
    /// separation min(l, l') >= 2 lbar: (wide-separation, comparable-degree).
    pub fn partition_sums(&self, kappa: f64) -> Result<(f64, f64), RemainderError> {
        check_exponent(kappa)?;
        let mut far = 0.0;
        let mut near = 0.0;
        for lbar in 1..=(self.n as i32 - 1) {
            let shard = self.shard(lbar);
            let weight = lam(lbar).powf(-kappa);
            let terms: Vec<(f64, bool)> = par::map_range(shard.len(), |i| {
                let d = shard[i];
                if d.l == d.lp {
                    return (0.0, false);
                }
                let inv = 1.0 / lam(d.l) - 1.0 / lam(d.lp);
                let dims = f64::from(2 * d.l + 1) * f64::from(2 * d.lp + 1) * f64::from(2 * lbar + 1);
                (2.0 * dims * d.delta * d.delta * inv * inv, d.l.min(d.lp) >= 2 * lbar)
            });
            for (t, wide) in terms {
                if wide {
                    far += weight * t;
                } else {
                    near += weight * t;
                }
            }
        }
        Ok((far, near))
    }

    /// Monte Carlo estimate of the expected squared H^{-kappa} norm from
    /// `count` white-noise samples; returns (mean, standard error).
    pub fn mc_remainder_sq(
        &self,
        kappa: f64,
        count: usize,
        seed: u64,
    ) -> Result<(f64, f64), RemainderError> {
        check_exponent(kappa)?;
        check_count(count)?;
        let vals = par::map_range(count, |i| {
            let w = sample_field(self.n, seed, STREAM_MU, i as u64);
            let r = self.remainder_field(&w).expect("sample level matches kernel level");
            r.sobolev_norm(-kappa).powi(2)
        });
        Ok(mean_and_stderr(&vals))
    }
}

/// Sample mean and its standard error (unbiased variance estimate).
fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let nf = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Least-squares amplitude C minimizing sum (value - C shape)^2.
fn ls_constant(values: &[f64], shapes: &[f64]) -> f64 {
    let num: f64 = values.iter().zip(shapes).map(|(v, s)| v * s).sum();
    let den: f64 = shapes.iter().map(|s| s * s).sum();
    num / den
}

/// Least-squares slope of log(values) against log(levels).
fn fit_log_slope(ns: &[u32], values: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| f64::from(n).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let nf = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / nf;
    let ybar = ys.iter().sum::<f64>() / nf;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let den: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    num / den
}

fn check_sweep(ns: &[u32]) -> Result<(), RemainderError> {
    if ns.len() < 2 {
        return Err(RemainderError::BadParameter(format!(
            "rate sweep needs at least two levels, got {}",
            ns.len()
        )));
    }
    if ns[0] < 2 || ns.windows(2).any(|p| p[1] <= p[0]) {
        return Err(RemainderError::BadParameter(
            "sweep levels must be strictly increasing and at least 2".into(),
        ));
    }
    Ok(())
}

/// Envelope shape of the wide-separation part, N^(5-2k) log N.
fn sphere_shape_far(n: u32, kappa: f64) -> f64 {
    let nf = f64::from(n);
    nf.powf(5.0 - 2.0 * kappa) * nf.ln()
}

/// Envelope shape of the comparable-degree part, N^(7-2k) log^5 N.
fn sphere_shape_near(n: u32, kappa: f64) -> f64 {
    let nf = f64::from(n);
    nf.powf(7.0 - 2.0 * kappa) * nf.ln().powi(5)
}

/// Torus envelope shape N^(8-2s) (1 + log N).
fn torus_shape(n: u32, s: f64) -> f64 {
    let nf = f64::from(n);
    nf.powf(8.0 - 2.0 * s) * (1.0 + nf.ln())
}

/// Decay sweep of an expected squared remainder across levels, with an
/// envelope fitted by least squares on the leading half of the sweep and
/// validated on the held-out half within fixed headroom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Geometry the sweep ran on: "sphere" or "torus".
    pub domain: String,
    /// Sobolev decay exponent (kappa on the sphere, s on the torus).
    pub exponent: f64,
    /// Commutator scale (sphere sweeps only).
    pub scale: Option<BracketScale>,
    /// Levels of the sweep, strictly increasing.
    pub ns: Vec<u32>,
    /// Expected squared remainder norm at each level.
    pub values: Vec<f64>,
    /// Least-squares slope of log value against log level.
    pub fitted_exponent: f64,
    /// Validated ceiling: fitted constant times envelope shape times the
    /// fixed headroom factor.
    pub bound_values: Vec<f64>,
    /// Comparable-degree partial sums (sphere only).
    pub near_values: Option<Vec<f64>>,
    /// Wide-separation partial sums, min(l, l') >= 2 lbar (sphere only).
    pub far_values: Option<Vec<f64>>,
    /// Comparable-degree envelope with its whole-sweep witness constant
    /// (sphere only; diagnostic, not part of the verdict).
    pub near_bounds: Option<Vec<f64>>,
    /// Wide-separation envelope with its whole-sweep witness constant
    /// (sphere only; diagnostic, not part of the verdict).
    pub far_bounds: Option<Vec<f64>>,
    /// Number of leading levels used to fit the envelope constant.
    pub calibration_count: usize,
    /// Verdict: values strictly decreasing and held-out levels inside the
    /// ceiling, whenever the exponent puts the envelope in its decaying
    /// range; true (report-only) otherwise.
    pub pass: bool,
}

impl RateReport {
    /// Writes one CSV row per level; partition columns only when present.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let parts = self.near_values.is_some();
        if parts {
            writeln!(w, "n,value,bound,near,far,near_bound,far_bound")?;
        } else {
            writeln!(w, "n,value,bound")?;
        }
        for i in 0..self.ns.len() {
            write!(w, "{},{:.16e},{:.16e}", self.ns[i], self.values[i], self.bound_values[i])?;
            if parts {
                let get = |v: &Option<Vec<f64>>| v.as_ref().expect("partition columns")[i];
                write!(
                    w,
                    ",{:.16e},{:.16e},{:.16e},{:.16e}",
                    get(&self.near_values),
                    get(&self.far_values),
                    get(&self.near_bounds),
                    get(&self.far_bounds)
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Builds the verdict fields shared by both geometries: fitted envelope
/// constant on the calibration half, ceiling with headroom, held-out
/// validation, and monotone decay when `decay_required`.
fn envelope_verdict(
    ns: &[u32],
    values: &[f64],
    shapes: &[f64],
    decay_required: bool,
) -> (Vec<f64>, usize, bool) {
    let cal = ns.len().div_ceil(2);
    let c_fit = ls_constant(&values[..cal], &shapes[..cal]);
    let bounds: Vec<f64> = shapes.iter().map(|s| c_fit * s * ENVELOPE_SLACK).collect();
    let validated = (cal..ns.len()).all(|i| values[i] <= bounds[i]);
    let decreasing = values.windows(2).all(|p| p[1] < p[0]);
    let pass = !decay_required || (validated && decreasing);
    (bounds, cal, pass)
}

/// Sweeps the sphere expectation across levels at one kappa and scale.
/// The envelope shape is N^(5-2k) log N + N^(7-2k) log^5 N; decay is
/// asserted only for kappa > 7/2, where that shape eventually decays.
pub fn rate_check_sphere(
    ns: &[u32],
    kappa: f64,
    scale: BracketScale,
) -> Result<RateReport, RemainderError> {
    check_sweep(ns)?;
    check_exponent(kappa)?;
    let mut values = Vec::with_capacity(ns.len());
    let mut near = Vec::with_capacity(ns.len());
    let mut far = Vec::with_capacity(ns.len());
    for &n in ns {
        let coeffs = RemainderCoeffs::build(n, scale)?;
        values.push(coeffs.expected_remainder_sq(kappa)?);
        let (f, nr) = coeffs.partition_sums(kappa)?;
        far.push(f);
        near.push(nr);
    }
    let shapes: Vec<f64> =
        ns.iter().map(|&n| sphere_shape_far(n, kappa) + sphere_shape_near(n, kappa)).collect();
    let (bounds, cal, pass) = envelope_verdict(ns, &values, &shapes, kappa > 3.5);
    let witness = |vals: &[f64], shape: fn(u32, f64) -> f64| -> Vec<f64> {
        let c = vals
            .iter()
            .zip(ns)
            .map(|(v, &n)| v / shape(n, kappa))
            .fold(0.0, f64::max);
        ns.iter().map(|&n| c * shape(n, kappa)).collect()
    };
    Ok(RateReport {
        domain: "sphere".into(),
        exponent: kappa,
        scale: Some(scale),
        fitted_exponent: fit_log_slope(ns, &values),
        ns: ns.to_vec(),
        near_bounds: Some(witness(&near, sphere_shape_near)),
        far_bounds: Some(witness(&far, sphere_shape_far)),
        near_values: Some(near),
        far_values: Some(far),
        values,
        bound_values: bounds,
        calibration_count: cal,
        pass,
    })
}

/// Sweeps the torus expectation across odd levels at one s. The envelope
/// shape is N^(8-2s) (1 + log N); decay is asserted only for s > 9/2.
pub fn rate_check_torus(ns: &[u32], s: f64) -> Result<RateReport, RemainderError> {
    check_sweep(ns)?;
    check_exponent(s)?;
    let mut values = Vec::with_capacity(ns.len());
    for &n in ns {
        values.push(torus_expected_remainder_sq(n, s)?);
    }
    let shapes: Vec<f64> = ns.iter().map(|&n| torus_shape(n, s)).collect();
    let (bounds, cal, pass) = envelope_verdict(ns, &values, &shapes, s > 4.5);
    Ok(RateReport {
        domain: "torus".into(),
        exponent: s,
        scale: None,
        fitted_exponent: fit_log_slope(ns, &values),
        ns: ns.to_vec(),
        values,
        bound_values: bounds,
        near_values: None,
        far_values: None,
        near_bounds: None,
        far_bounds: None,
        calibration_count: cal,
        pass,
    })
}

/// Lattice modes of the centered box [-(N-1)/2, (N-1)/2]^2 without the
/// origin, in lexicographic order.
fn torus_modes(n: u32) -> Vec<[i32; 2]> {
    let h = (n as i32 - 1) / 2;
    let mut out = Vec::new();
    for a in -h..=h {
        for b in -h..=h {
            if (a, b) != (0, 0) {
                out.push([a, b]);
            }
        }
    }
    out
}

fn check_torus_level(n: u32) -> Result<(), RemainderError> {
    if n < 3 || n % 2 == 0 {
        return Err(RemainderError::BadParameter(format!(
            "torus level must be odd and at least 3, got {n}"
        )));
    }
    Ok(())
}

/// Expected squared H^{-s} norm of the torus remainder under unit white
/// noise: the symmetrized lattice double sum
/// sum_n |n|^{-2s} sum_k C^2 (|n-k|^2 - |k|^2) / (|k|^4 |n-k|^2)
/// over the centered box, equal to the explicit half-squared form
/// (1/2) sum C^2 (1/|k|^2 - 1/|n-k|^2)^2 by the antisymmetry of the
/// constants under k -> n - k.
pub fn torus_expected_remainder_sq(n: u32, s: f64) -> Result<f64, RemainderError> {
    check_torus_level(n)?;
    check_exponent(s)?;
    let modes = torus_modes(n);
    let h = (n as i32 - 1) / 2;
    let terms = par::map_range(modes.len(), |i| {
        let nv = modes[i];
        let nn = f64::from(nv[0] * nv[0] + nv[1] * nv[1]);
        let mut inner = 0.0;
        for &kv in &modes {
            let jv = [nv[0] - kv[0], nv[1] - kv[1]];
            if jv == [0, 0] || jv[0].abs() > h || jv[1].abs() > h {
                continue;
            }
            let c = structconst::torus_c(n, nv, kv).expect("modes lie in the box");
            let kk = f64::from(kv[0] * kv[0] + kv[1] * kv[1]);
            let jj = f64::from(jv[0] * jv[0] + jv[1] * jv[1]);
            inner += c * c * (jj - kk) / (kk * kk * jj);
        }
        nn.powf(-s) * inner
    });
    Ok(terms.iter().sum())
}

/// Monte Carlo estimate of the torus expectation from `count` white-noise
/// lattice samples; returns (mean, standard error). The unsymmetrized
/// quadratic contraction is evaluated directly, so agreement with
/// `torus_expected_remainder_sq` checks the symmetrization step.
pub fn torus_mc_remainder_sq(
    n: u32,
    s: f64,
    count: usize,
    seed: u64,
) -> Result<(f64, f64), RemainderError> {
    check_torus_level(n)?;
    check_exponent(s)?;
    check_count(count)?;
    let modes = torus_modes(n);
    let h = (n as i32 - 1) / 2;
    let side = (2 * h + 1) as usize;
    let grid_index = |v: [i32; 2]| ((v[0] + h) as usize) * side + ((v[1] + h) as usize);
    let vals = par::map_range(count, |i| {
        let mut rng = sample_rng(seed, STREAM_TORUS, i as u64);
        let mut what = vec![Complex::new(0.0, 0.0); side * side];
        for a in -h..=h {
            for b in -h..=h {
                if a > 0 || (a == 0 && b > 0) {
                    let x: f64 = rng.sample(StandardNormal);
                    let y: f64 = rng.sample(StandardNormal);
                    let z = Complex::new(x, y) * std::f64::consts::FRAC_1_SQRT_2;
                    what[grid_index([a, b])] = z;
                    what[grid_index([-a, -b])] = z.conj();
                }
            }
        }
        let mut total = 0.0;
        for &nv in &modes {
            let nn = f64::from(nv[0] * nv[0] + nv[1] * nv[1]);
            let mut r = Complex::new(0.0, 0.0);
            for &kv in &modes {
                let jv = [nv[0] - kv[0], nv[1] - kv[1]];
                if jv == [0, 0] || jv[0].abs() > h || jv[1].abs() > h {
                    continue;
                }
                let c = structconst::torus_c(n, nv, kv).expect("modes lie in the box");
                let kk = f64::from(kv[0] * kv[0] + kv[1] * kv[1]);
                r += what[grid_index(kv)] * what[grid_index(jv)] * (c / kk);
            }
            total += nn.powf(-s) * r.norm_sqr();
        }
        total
    });
    Ok(mean_and_stderr(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    use crate::basis::{quadrature_bracket_oracle, BasisSet, QuadratureGrid, SmoothField};

    #[test]
    fn collapsed_and_per_m_routes_agree() {
        let coeffs = RemainderCoeffs::build(5, BracketScale::NPlusOne32).unwrap();
        for kappa in [4.0, 2.5] {
            let a = coeffs.expected_remainder_sq(kappa).unwrap();
            let b = coeffs.expected_remainder_sq_per_m(kappa).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
        assert_relative_eq!(
            coeffs.expected_remainder_sq(4.0).unwrap(),
            5.389283231250e-3,
            max_relative = 1e-11
        );
        assert_relative_eq!(
            coeffs.expected_remainder_sq(2.5).unwrap(),
            1.436374321606e-1,
            max_relative = 1e-11
        );
        let nine = RemainderCoeffs::build(9, BracketScale::NPlusOne32).unwrap();
        assert_relative_eq!(
            nine.expected_remainder_sq(4.0).unwrap(),
            2.513296536676e-3,
            max_relative = 1e-11
        );
        let default_scale = RemainderCoeffs::build(5, BracketScale::N32).unwrap();
        assert_relative_eq!(
            default_scale.expected_remainder_sq(4.0).unwrap(),
            8.731276638973e-4,
            max_relative = 1e-11
        );
    }

    #[test]
    fn mean_term_collapses_at_every_output_degree() {
        for n in [5, 9] {
            let coeffs = RemainderCoeffs::build(n, BracketScale::N32).unwrap();
            assert!(coeffs.first_wick_residual() <= 1e-10);
        }
    }

    #[test]
    fn entries_match_structure_constant_differences() {
        let n = 5;
        let scale = BracketScale::N32;
        let coeffs = RemainderCoeffs::build(n, scale).unwrap();
        for l in 1..=4i32 {
            for lp in 1..=4i32 {
                for lbar in 1..=4i32 {
                    for m in -l..=l {
                        for mp in -lp..=lp {
                            let mbar = m + mp;
                            if mbar.abs() > lbar {
                                continue;
                            }
                            let idx = TripleIndex::new(l, m, lp, mp, lbar, mbar).unwrap();
                            let direct = structconst::continuous_c(&idx)
                                - structconst::discrete_c(n, &idx, scale).unwrap();
                            assert_abs_diff_eq!(coeffs.entry(&idx), direct, epsilon = 1e-10);
                        }
                    }
                }
            }
        }
        let anchor = TripleIndex::new(1, 0, 2, 1, 2, 1).unwrap();
        assert_relative_eq!(coeffs.entry(&anchor), -7.143229079498e-2, max_relative = 1e-11);
        let np = RemainderCoeffs::build(5, BracketScale::NPlusOne32).unwrap();
        let anchor = TripleIndex::new(2, 1, 3, -1, 4, 0).unwrap();
        assert_relative_eq!(np.entry(&anchor), -1.454472909987, max_relative = 1e-11);
        let nine = RemainderCoeffs::build(9, BracketScale::N32).unwrap();
        let anchor = TripleIndex::new(1, 1, 2, 1, 2, 2).unwrap();
        assert_relative_eq!(nine.entry(&anchor), 3.052353198015e-2, max_relative = 1e-11);
    }

    #[test]
    fn entries_decay_quadratically_in_level() {
        let kernels: Vec<RemainderCoeffs> = [5, 9, 17]
            .iter()
            .map(|&n| RemainderCoeffs::build(n, BracketScale::N32).unwrap())
            .collect();
        let tuples = [(1, 0, 2, 1, 2, 1), (2, 1, 3, -1, 4, 0), (2, 0, 2, 1, 3, 1)];
        for (l, m, lp, mp, lbar, mbar) in tuples {
            let idx = TripleIndex::new(l, m, lp, mp, lbar, mbar).unwrap();
            let vals: Vec<f64> = kernels.iter().map(|k| k.entry(&idx).abs()).collect();
            for pair in vals.windows(2) {
                let ratio = pair[1] / pair[0];
                assert!(
                    (0.15..=0.45).contains(&ratio),
                    "step ratio {ratio} outside the quadratic-decay band for {idx:?}"
                );
            }
        }
    }

    #[test]
    fn single_mode_fields_have_zero_remainder() {
        let coeffs = RemainderCoeffs::build(5, BracketScale::N32).unwrap();
        let mut w = QuantizedField::zero(5);
        w.set_mode(2, 1, Complex::new(0.8, -0.4));
        let r = coeffs.remainder_field(&w).unwrap();
        assert!(r.sobolev_norm(0.0) <= 1e-13);
    }

    #[test]
    fn field_matches_matrix_and_quadrature_route() {
        let n = 5;
        let scale = BracketScale::N32;
        let coeffs = RemainderCoeffs::build(n, scale).unwrap();
        let mut w = QuantizedField::zero(n);
        w.set_mode(1, 0, Complex::new(1.0, 0.0));
        w.set_mode(1, 1, Complex::new(0.7, 0.3));
        let got = coeffs.remainder_field(&w).unwrap();

        let basis = BasisSet::build(n);
        let p = w.laplacian_pow(-1.0).scaled(-1.0);
        let pm = p.matrix(&basis).clone();
        let wm = w.matrix(&basis).clone();
        let disc_m = (&pm * &wm - &wm * &pm) * Complex::new(scale.factor(n), 0.0);
        let disc = QuantizedField::from_matrix(&basis, &disc_m);

        let support = [(1, 0), (1, 1), (1, -1)];
        for lbar in 1..=2 {
            for mbar in -lbar..=lbar {
                let mut cont = Complex::new(0.0, 0.0);
                for (l, m) in support {
                    for (lp, mp) in support {
                        if m + mp != mbar {
                            continue;
                        }
                        let idx = TripleIndex::new(l, m, lp, mp, lbar, mbar).unwrap();
                        let grid = QuadratureGrid::for_triple(&idx);
                        let c = quadrature_bracket_oracle(&idx, grid).unwrap();
                        cont += Complex::new(0.0, -c / lam(l)) * w.coeff(l, m) * w.coeff(lp, mp);
                    }
                }
                let want = disc.coeff(lbar, mbar) - cont;
                let diff = (got.coeff(lbar, mbar) - want).norm();
                assert!(
                    diff <= 1e-8,
                    "mode ({lbar},{mbar}): field {:?} vs direct {want:?}",
                    got.coeff(lbar, mbar)
                );
            }
        }
    }

    #[test]
    fn field_norm_decays_quadratically_with_level() {
        let mut smooth = SmoothField::zero(2);
        smooth.set_mode(1, 0, Complex::new(0.8, 0.0));
        smooth.set_mode(1, 1, Complex::new(0.5, 0.2));
        smooth.set_mode(2, 1, Complex::new(0.3, -0.1));
        smooth.set_mode(2, 2, Complex::new(-0.2, 0.4));
        let norms: Vec<f64> = [5, 9, 17]
            .iter()
            .map(|&n| {
                let coeffs = RemainderCoeffs::build(n, BracketScale::N32).unwrap();
                let w = smooth.project(n);
                coeffs.remainder_field(&w).unwrap().sobolev_norm(0.0)
            })
            .collect();
        for pair in norms.windows(2) {
            assert!(pair[1] < pair[0]);
            assert!(pair[0] / pair[1] >= 2.5, "decay {:?} slower than quadratic", norms);
        }
    }

    #[test]
    fn mc_estimate_matches_wick_expectation() {
        let coeffs = RemainderCoeffs::build(5, BracketScale::NPlusOne32).unwrap();
        let expected = coeffs.expected_remainder_sq(4.0).unwrap();
        let (mean, stderr) = coeffs.mc_remainder_sq(4.0, 1200, 20240311).unwrap();
        assert!(stderr > 0.0);
        assert!(
            (mean - expected).abs() <= 4.0 * stderr,
            "MC {mean} vs Wick {expected} at stderr {stderr}"
        );
        assert!(matches!(
            coeffs.mc_remainder_sq(4.0, 50, 1),
            Err(RemainderError::BadParameter(_))
        ));
    }

    #[test]
    fn sphere_rate_sweep_passes_in_the_decaying_range() {
        let report = rate_check_sphere(&[5, 9, 17], 4.0, BracketScale::NPlusOne32).unwrap();
        assert!(report.pass);
        assert_eq!(report.calibration_count, 2);
        assert!(report.values.windows(2).all(|p| p[1] < p[0]));
        assert!(report.fitted_exponent < -0.9);
        assert_relative_eq!(report.values[0], 5.389283231250e-3, max_relative = 1e-10);
        let near = report.near_values.as_ref().unwrap();
        let far = report.far_values.as_ref().unwrap();
        for i in 0..report.ns.len() {
            assert_relative_eq!(near[i] + far[i], report.values[i], max_relative = 1e-12);
            assert!(near[i] <= report.near_bounds.as_ref().unwrap()[i] * (1.0 + 1e-12));
            assert!(far[i] <= report.far_bounds.as_ref().unwrap()[i] * (1.0 + 1e-12));
        }
        let json = serde_json::to_string(&report).unwrap();
        let back: RateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn sphere_rate_sweep_below_threshold_reports_only() {
        let report = rate_check_sphere(&[5, 9], 1.0, BracketScale::N32).unwrap();
        assert!(report.pass);
        assert_eq!(report.values.len(), 2);
        assert!(report.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn torus_sum_matches_frozen_values() {
        let frozen = [
            (5, 3.853994605435e-1),
            (9, 1.559655249770e-1),
            (17, 5.055460044763e-2),
            (33, 1.447228847834e-2),
        ];
        for (n, want) in frozen {
            assert_relative_eq!(
                torus_expected_remainder_sq(n, 5.0).unwrap(),
                want,
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn torus_sum_equals_half_squared_form_and_is_positive() {
        for n in [5, 9] {
            let s = 5.0;
            let collapsed = torus_expected_remainder_sq(n, s).unwrap();
            let modes = torus_modes(n);
            let h = (n as i32 - 1) / 2;
            let mut explicit = 0.0;
            for &nv in &modes {
                let nn = f64::from(nv[0] * nv[0] + nv[1] * nv[1]);
                for &kv in &modes {
                    let jv = [nv[0] - kv[0], nv[1] - kv[1]];
                    if jv == [0, 0] || jv[0].abs() > h || jv[1].abs() > h {
                        continue;
                    }
                    let c = structconst::torus_c(n, nv, kv).unwrap();
                    let kk = f64::from(kv[0] * kv[0] + kv[1] * kv[1]);
                    let jj = f64::from(jv[0] * jv[0] + jv[1] * jv[1]);
                    explicit += nn.powf(-s) * 0.5 * c * c * (1.0 / kk - 1.0 / jj).powi(2);
                }
            }
            assert_relative_eq!(collapsed, explicit, max_relative = 1e-13);
            assert!(collapsed > 0.0);
        }
    }

    #[test]
    fn torus_mc_matches_deterministic_sum() {
        let expected = torus_expected_remainder_sq(5, 5.0).unwrap();
        let (mean, stderr) = torus_mc_remainder_sq(5, 5.0, 1500, 7).unwrap();
        assert!(stderr > 0.0);
        assert!(
            (mean - expected).abs() <= 4.0 * stderr,
            "MC {mean} vs deterministic {expected} at stderr {stderr}"
        );
    }

    #[test]
    fn torus_rate_sweep_passes_at_s_five() {
        let report = rate_check_torus(&[5, 9, 17, 33], 5.0).unwrap();
        assert!(report.pass);
        assert!(report.values.windows(2).all(|p| p[1] < p[0]));
        assert!(report.fitted_exponent < -1.4);
        assert!(report.near_values.is_none());
    }

    #[test]
    fn csv_export_has_one_row_per_level() {
        let sphere = rate_check_sphere(&[5, 9], 4.0, BracketScale::N32).unwrap();
        let mut buf = Vec::new();
        sphere.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 7);
        let torus = rate_check_torus(&[5, 9], 5.0).unwrap();
        let mut buf = Vec::new();
        torus.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(matches!(
            RemainderCoeffs::build(1, BracketScale::N32),
            Err(RemainderError::BadParameter(_))
        ));
        let coeffs = RemainderCoeffs::build(5, BracketScale::N32).unwrap();
        assert!(coeffs.expected_remainder_sq(0.0).is_err());
        assert!(coeffs.expected_remainder_sq(f64::NAN).is_err());
        let other = QuantizedField::zero(7);
        assert!(matches!(
            coeffs.remainder_field(&other),
            Err(RemainderError::LevelMismatch { kernel: 5, field: 7 })
        ));
        assert!(rate_check_sphere(&[9, 5], 4.0, BracketScale::N32).is_err());
        assert!(rate_check_sphere(&[5], 4.0, BracketScale::N32).is_err());
        assert!(torus_expected_remainder_sq(8, 5.0).is_err());
        assert!(torus_mc_remainder_sq(5, 5.0, 10, 1).is_err());
    }
}
