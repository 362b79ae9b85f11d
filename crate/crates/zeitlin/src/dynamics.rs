//! Time integration of the matrix Euler flow dW/dt = s_N [P, W] with
//! Delta_N P = W, conserved-quantity monitoring, and the time-rescaled
//! process.
//!
//! The default stepper is an isospectral midpoint scheme in Cayley form:
//! the midpoint state solves a fixed point and the update is conjugation by
//! a unitary Cayley transform, so the eigenvalue spectrum (hence every
//! Casimir) is preserved to solver tolerance rather than to the order of
//! the method. A classical fourth-order Runge-Kutta stepper is available
//! for cross-checks; it visibly drifts the Casimirs, which is why it is not
//! the default.

use crate::basis::{BasisError, BasisSet, CMatrix, QuantizedField};
use crate::structconst::BracketScale;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

/// Errors from configuration validation and the implicit solve.
#[derive(Debug, Error)]
pub enum DynamicsError {
    /// Invalid flow configuration.
    #[error("bad flow configuration: {0}")]
    BadConfig(String),
    /// The midpoint fixed point failed to converge even after step halving.
    #[error("midpoint solve did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    /// Propagated field-level error.
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Available time steppers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    /// Spectrum-preserving implicit midpoint in Cayley form (default).
    #[default]
    #[serde(rename = "isospectral-midpoint")]
    IsospectralMidpoint,
    /// Classical explicit Runge-Kutta of order four, for cross-checks.
    #[serde(rename = "rk4")]
    Rk4,
}

impl FromStr for Integrator {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "isospectral-midpoint" => Ok(Self::IsospectralMidpoint),
            "rk4" => Ok(Self::Rk4),
            other => Err(DynamicsError::BadConfig(format!("unknown integrator '{other}'"))),
        }
    }
}

/// Flow configuration: level, step size, horizon, stepper, bracket scale,
/// and the stride (in steps) between recorded diagnostics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Level N.
    pub n: u32,
    /// Time step.
    pub dt: f64,
    /// Integration horizon.
    pub t_final: f64,
    /// Stepper choice.
    pub integrator: Integrator,
    /// Bracket strength convention.
    pub bracket_scale: BracketScale,
    /// Steps between recorded samples; the initial and final states are
    /// always recorded.
    pub monitor_stride: usize,
}

impl FlowConfig {
    /// A conservative default configuration at level N.
    pub fn new(n: u32) -> Self {
        Self {
            n,
            dt: 1e-3,
            t_final: 1.0,
            integrator: Integrator::default(),
            bracket_scale: BracketScale::default(),
            monitor_stride: 100,
        }
    }

    /// Validates positivity and ordering constraints.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.n < 2 {
            return Err(DynamicsError::BadConfig(format!("level {} below 2", self.n)));
        }
        if !(self.dt > 0.0) {
            return Err(DynamicsError::BadConfig(format!("dt {} not positive", self.dt)));
        }
        if self.t_final < self.dt {
            return Err(DynamicsError::BadConfig(format!(
                "horizon {} shorter than one step {}",
                self.t_final, self.dt
            )));
        }
        if self.monitor_stride == 0 {
            return Err(DynamicsError::BadConfig("monitor stride must be positive".into()));
        }
        Ok(())
    }
}

/// Conserved-quantity snapshot along a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Model time.
    pub t: f64,
    /// Energy H = -Tr(P^* W)/2.
    pub energy: f64,
    /// Momentum: the (1,1), (1,0), (1,-1) coefficients.
    pub momentum: [Complex<f64>; 3],
    /// Trace powers Tr(W^k), k = 2..=K: the nonvanishing component (real
    /// for even k, imaginary for odd k; the other is zero for
    /// skew-Hermitian W).
    pub casimirs: Vec<f64>,
    /// Largest eigenvalue magnitude of W.
    pub spectral_radius: f64,
}

/// A sampled solution of the matrix flow.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Level N.
    pub n: u32,
    /// Sample times, strictly increasing.
    pub times: Vec<f64>,
    /// Field states at the sample times.
    pub states: Vec<QuantizedField>,
    /// Conserved-quantity snapshots at the sample times.
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    /// Writes the diagnostics table as CSV with columns
    /// t, H, M1_re, M1_im, M0_re, M0_im, Mm1_re, Mm1_im, C2..CK,
    /// spectral_radius.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), DynamicsError> {
        let k_max = self.diagnostics.first().map_or(0, |d| d.casimirs.len() + 1);
        let mut header = String::from("t,H,M1_re,M1_im,M0_re,M0_im,Mm1_re,Mm1_im");
        for k in 2..=k_max {
            header.push_str(&format!(",C{k}"));
        }
        header.push_str(",spectral_radius");
        writeln!(out, "{header}").map_err(BasisError::Io)?;
        for d in &self.diagnostics {
            let mut row = format!("{:.16e},{:.16e}", d.t, d.energy);
            for m in &d.momentum {
                row.push_str(&format!(",{:.16e},{:.16e}", m.re, m.im));
            }
            for c in &d.casimirs {
                row.push_str(&format!(",{c:.16e}"));
            }
            row.push_str(&format!(",{:.16e}", d.spectral_radius));
            writeln!(out, "{row}").map_err(BasisError::Io)?;
        }
        Ok(())
    }
}

/// Stream function generator: solves Delta_N P = W spectrally and returns
/// the matrix of P.
fn stream_matrix(basis: &BasisSet, w: &CMatrix) -> CMatrix {
    let field = QuantizedField::from_matrix(basis, w);
    let p = field.laplacian_pow(-1.0).scaled(-1.0);
    p.matrix(basis).clone()
}

/// Right-hand side of the flow: s_N [P(W), W].
fn rhs_matrix(basis: &BasisSet, w: &CMatrix, s_n: f64) -> CMatrix {
    let p = stream_matrix(basis, w);
    (&p * w - w * &p) * Complex::new(s_n, 0.0)
}

/// The Euler vector field s_N [P, W] with Delta_N P = W, in coefficient
/// form. The result is skew-Hermitian traceless and enstrophy-orthogonal
/// to W.
pub fn vector_field(basis: &BasisSet, w: &QuantizedField, s_n: f64) -> QuantizedField {
    let wm = w.matrix(basis);
    QuantizedField::from_matrix(basis, &rhs_matrix(basis, wm, s_n))
}

/// Energy H = -Tr(P^* W)/2 = ||W||^2_{H^{-1}} / 2, computed spectrally.
pub fn energy(w: &QuantizedField) -> f64 {
    let h = w.sobolev_norm(-1.0);
    0.5 * h * h
}

/// Momentum: the degree-one coefficients (w_{1,1}, w_{1,0}, w_{1,-1}).
pub fn momentum(w: &QuantizedField) -> [Complex<f64>; 3] {
    [w.coeff(1, 1), w.coeff(1, 0), w.coeff(1, -1)]
}

/// Trace powers Tr(W^k) for k = 2..=k_max, reduced to their nonvanishing
/// component: the real part for even k, the imaginary part for odd k.
pub fn trace_powers(w: &CMatrix, k_max: usize) -> Vec<f64> {
    let mut powers = Vec::with_capacity(k_max.saturating_sub(1));
    let mut acc = w * w;
    for k in 2..=k_max {
        let tr: Complex<f64> = (0..w.nrows()).map(|i| acc[(i, i)]).sum();
        powers.push(if k % 2 == 0 { tr.re } else { tr.im });
        if k < k_max {
            acc = &acc * w;
        }
    }
    powers
}

/// Real spectrum of the Hermitian companion -iW, sorted ascending. The
/// eigenvalues of W itself are i times these values.
pub fn skew_spectrum(w: &CMatrix) -> Vec<f64> {
    let herm = w.map(|z| Complex::new(z.im, -z.re)); // -i W entrywise
    let eig = nalgebra::SymmetricEigen::new(herm);
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    values
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// One Cayley-form midpoint step: solve the fixed point
/// Wt = W + [A, Wt] + A Wt A with A = (dt/2) s_N P(Wt), then conjugate
/// W by the unitary Q = (I + A)(I - A)^{-1}. Falls back to two half steps
/// (at most four halvings) if the fixed point stalls.
fn cayley_step(
    basis: &BasisSet,
    w: &CMatrix,
    dt: f64,
    s_n: f64,
    depth: u32,
) -> Result<CMatrix, DynamicsError> {
    let tol = 1e-13 * max_abs(w).max(1.0);
    let half = Complex::new(0.5 * dt * s_n, 0.0);
    let mut wt = w.clone();
    let mut a = stream_matrix(basis, &wt) * half;
    let mut converged = false;
    for _ in 0..50 {
        let next = w + (&a * &wt - &wt * &a) + &a * &wt * &a;
        let delta = max_abs(&(&next - &wt));
        wt = next;
        a = stream_matrix(basis, &wt) * half;
        if delta < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        if depth >= 4 {
            return Err(DynamicsError::NoConvergence { iterations: 50 });
        }
        let mid = cayley_step(basis, w, 0.5 * dt, s_n, depth + 1)?;
        return cayley_step(basis, &mid, 0.5 * dt, s_n, depth + 1);
    }
    let dim = w.nrows();
    let id = CMatrix::identity(dim, dim);
    let plus = &id + &a;
    let minus = &id - &a;
    let q = minus
        .clone()
        .lu()
        .solve(&plus)
        .ok_or(DynamicsError::NoConvergence { iterations: 50 })?;
    let q_inv = plus
        .lu()
        .solve(&minus)
        .ok_or(DynamicsError::NoConvergence { iterations: 50 })?;
    Ok(&q * w * &q_inv)
}

/// One classical RK4 step on the matrix flow.
fn rk4_step(basis: &BasisSet, w: &CMatrix, dt: f64, s_n: f64) -> CMatrix {
    let h = Complex::new(dt, 0.0);
    let two = Complex::new(2.0, 0.0);
    let k1 = rhs_matrix(basis, w, s_n);
    let k2 = rhs_matrix(basis, &(w + &k1 * (h * 0.5)), s_n);
    let k3 = rhs_matrix(basis, &(w + &k2 * (h * 0.5)), s_n);
    let k4 = rhs_matrix(basis, &(w + &k3 * h), s_n);
    w + (k1 + k2 * two + k3 * two + k4) * (h / Complex::new(6.0, 0.0))
}

/// Advances one step with the configured integrator.
pub fn step(
    basis: &BasisSet,
    w: &QuantizedField,
    cfg: &FlowConfig,
) -> Result<QuantizedField, DynamicsError> {
    cfg.validate()?;
    let s_n = cfg.bracket_scale.factor(cfg.n);
    let wm = w.matrix(basis);
    let next = match cfg.integrator {
        Integrator::IsospectralMidpoint => cayley_step(basis, wm, cfg.dt, s_n, 0)?,
        Integrator::Rk4 => rk4_step(basis, wm, cfg.dt, s_n),
    };
    Ok(QuantizedField::from_matrix(basis, &next))
}

fn snapshot(w: &QuantizedField, wm: &CMatrix, t: f64, k_max: usize) -> Diagnostics {
    let spectrum = skew_spectrum(wm);
    let radius = spectrum.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Diagnostics {
        t,
        energy: energy(w),
        momentum: momentum(w),
        casimirs: trace_powers(wm, k_max),
        spectral_radius: radius,
    }
}

/// Integrates from an initial field, recording states and diagnostics
/// every `monitor_stride` steps (plus the initial and final states). Trace
/// powers are monitored up to min(6, N).
pub fn simulate(
    basis: &BasisSet,
    w0: &QuantizedField,
    cfg: &FlowConfig,
) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    if basis.n() != cfg.n || w0.n() != cfg.n {
        return Err(DynamicsError::BadConfig(format!(
            "level mismatch: basis {}, state {}, config {}",
            basis.n(),
            w0.n(),
            cfg.n
        )));
    }
    let s_n = cfg.bracket_scale.factor(cfg.n);
    let k_max = (cfg.n as usize).min(6);
    let steps = (cfg.t_final / cfg.dt).round().max(1.0) as usize;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut diagnostics = Vec::new();
    let mut w = w0.matrix(basis).clone();
    times.push(0.0);
    states.push(w0.clone());
    diagnostics.push(snapshot(w0, &w, 0.0, k_max));
    for k in 1..=steps {
        w = match cfg.integrator {
            Integrator::IsospectralMidpoint => cayley_step(basis, &w, cfg.dt, s_n, 0)?,
            Integrator::Rk4 => rk4_step(basis, &w, cfg.dt, s_n),
        };
        if k % cfg.monitor_stride == 0 || k == steps {
            let t = cfg.dt * k as f64;
            let field = QuantizedField::from_matrix(basis, &w);
            times.push(t);
            diagnostics.push(snapshot(&field, &w, t, k_max));
            states.push(field);
        }
    }
    Ok(Trajectory { n: cfg.n, times, states, diagnostics })
}

/// Relabels a trajectory to the accelerated clock t -> t / N^{3/2}; states
/// and diagnostics values are unchanged (their time stamps rescale).
pub fn accelerate(traj: &Trajectory, n: u32) -> Trajectory {
    let factor = f64::from(n).powf(1.5).recip();
    let times: Vec<f64> = traj.times.iter().map(|t| t * factor).collect();
    let diagnostics = traj
        .diagnostics
        .iter()
        .zip(&times)
        .map(|(d, &t)| Diagnostics { t, ..d.clone() })
        .collect();
    Trajectory { n: traj.n, times, states: traj.states.clone(), diagnostics }
}

/// Largest eigenvalue magnitude of the matrix of a field.
pub fn spectral_radius(basis: &BasisSet, w: &QuantizedField) -> f64 {
    skew_spectrum(w.matrix(basis)).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
