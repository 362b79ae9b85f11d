//! The Gaussian measure on su(N), its sampling and verification, Gibbs
//! reweighting by higher trace powers, spectral decompositions, and the
//! variance of circulations along deterministic closed curves.
//!
//! Sampling is counter-based for reproducibility: every sample seeds the
//! same ChaCha8 key, selects a subsystem stream, and jumps to a word
//! position proportional to the sample index, so ensembles are identical
//! whether drawn sequentially or in parallel.

use crate::basis::{mode_count, modes, theta_harmonic, theta_harmonic_deriv};
use crate::basis::{BasisError, BasisSet, CMatrix, QuantizedField};
use crate::dynamics::trace_powers;
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from measure-level operations.
#[derive(Debug, Error)]
pub enum MeasureError {
    /// An invalid parameter combination.
    #[error("bad parameter: {0}")]
    BadParameter(String),
    /// Trace-power reweighting only accepts exponents divisible by four,
    /// where the Casimir is real and nonnegative.
    #[error("reweighting exponent {0} is not a positive multiple of four")]
    CasimirPower(i32),
    /// The Hermitian eigensolver failed to converge.
    #[error("eigensolver did not converge")]
    Eigensolver,
    /// A curve quadrature grid cannot resolve the requested band.
    #[error("curve quadrature under-resolved: need >= {need} nodes, got {got}")]
    UnderResolved { need: usize, got: usize },
    /// Propagated field error.
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Subsystem stream for plain Gaussian ensembles.
pub const STREAM_MU: u64 = 1;
/// Subsystem stream for circulation Monte Carlo draws.
pub const STREAM_CIRCULATION: u64 = 2;
/// Subsystem stream for trajectory initial conditions.
pub const STREAM_FLOW: u64 = 3;

/// A deterministic generator for one sample: fixed key, subsystem stream,
/// and a 2^16-word block per sample index.
pub fn sample_rng(seed: u64, stream: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((sample as u128) << 16);
    rng
}

/// Draws one standard Gaussian field at level N for a sample index.
pub fn sample_field(n: u32, seed: u64, stream: u64, sample: u64) -> QuantizedField {
    let mut rng = sample_rng(seed, stream, sample);
    let real: Vec<f64> = (0..mode_count(n)).map(|_| rng.sample(StandardNormal)).collect();
    QuantizedField::from_real(n, real)
}

/// An i.i.d. (optionally importance-weighted) ensemble of fields.
#[derive(Clone, Debug)]
pub struct GaussianEnsemble {
    /// Level N.
    pub n: u32,
    /// The sampled fields.
    pub samples: Vec<QuantizedField>,
    /// Importance weights; all one for a plain ensemble.
    pub weights: Vec<f64>,
    /// Key used to draw the ensemble.
    pub seed: u64,
    /// Subsystem stream used to draw the ensemble.
    pub stream: u64,
}

impl GaussianEnsemble {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when the ensemble holds no samples.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Effective sample size (sum w)^2 / sum w^2.
    pub fn effective_sample_size(&self) -> f64 {
        let sum: f64 = self.weights.iter().sum();
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        if sq == 0.0 {
            0.0
        } else {
            sum * sum / sq
        }
    }

    /// Weighted mean and its standard error for a scalar statistic.
    pub fn weighted_mean<F: Fn(&QuantizedField) -> f64>(&self, f: F) -> (f64, f64) {
        let total: f64 = self.weights.iter().sum();
        let values: Vec<f64> = self.samples.iter().map(f).collect();
        let mean = values.iter().zip(&self.weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let var = values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * (v - mean).powi(2))
            .sum::<f64>()
            / total;
        let ess = self.effective_sample_size();
        (mean, (var / ess.max(1.0)).sqrt())
    }
}

/// Draws `count` i.i.d. samples of the standard Gaussian measure on su(N).
pub fn sample_mu(n: u32, count: usize, seed: u64) -> GaussianEnsemble {
    assert!(n >= 2 && count >= 1, "need level >= 2 and at least one sample");
    let samples =
        crate::par::map_range(count, |i| sample_field(n, seed, STREAM_MU, i as u64));
    GaussianEnsemble { n, samples, weights: vec![1.0; count], seed, stream: STREAM_MU }
}

/// Covariance verification: empirical second moments over the real basis
/// against the identity, with per-entry 4-sigma envelopes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    /// Level N.
    pub n: u32,
    /// Sample count.
    pub count: usize,
    /// Largest |C_aa - 1|.
    pub max_diagonal_dev: f64,
    /// Largest |C_ab|, a != b.
    pub max_offdiagonal_dev: f64,
    /// 4-sigma envelope for diagonal entries: 4 sqrt(2 / count).
    pub envelope_diagonal: f64,
    /// 4-sigma envelope for off-diagonal entries: 4 / sqrt(count).
    pub envelope_offdiagonal: f64,
    /// Both maxima within their envelopes.
    pub pass: bool,
}

/// Compares the empirical covariance of an unweighted ensemble with the
/// identity.
pub fn covariance_check(ens: &GaussianEnsemble) -> Result<CovarianceReport, MeasureError> {
    let count = ens.len();
    if count < 100 {
        return Err(MeasureError::BadParameter(format!(
            "covariance check needs at least 100 samples, got {count}"
        )));
    }
    let d = mode_count(ens.n);
    let mut cov = vec![0.0f64; d * d];
    for sample in &ens.samples {
        let g = sample.real_coeffs();
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += g[a] * g[b];
            }
        }
    }
    let mut max_diag = 0.0f64;
    let mut max_off = 0.0f64;
    let inv = 1.0 / count as f64;
    for a in 0..d {
        for b in a..d {
            let c = cov[a * d + b] * inv;
            if a == b {
                max_diag = max_diag.max((c - 1.0).abs());
            } else {
                max_off = max_off.max(c.abs());
            }
        }
    }
    let envelope_diagonal = 4.0 * (2.0 / count as f64).sqrt();
    let envelope_offdiagonal = 4.0 / (count as f64).sqrt();
    Ok(CovarianceReport {
        n: ens.n,
        count,
        max_diagonal_dev: max_diag,
        max_offdiagonal_dev: max_off,
        envelope_diagonal,
        envelope_offdiagonal,
        pass: max_diag <= envelope_diagonal && max_off <= envelope_offdiagonal,
    })
}

/// One verified fourth-moment case.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WickCase {
    /// The four modes (l, m) entering E[w w conj(w) conj(w)].
    pub quad: [(i32, i32); 4],
    /// Closed-form moment from the pairing expansion.
    pub truth: f64,
    /// Monte Carlo mean, real part.
    pub mean_re: f64,
    /// Monte Carlo mean, imaginary part.
    pub mean_im: f64,
    /// Standard errors of the two parts.
    pub sigma_re: f64,
    /// Standard error of the imaginary part.
    pub sigma_im: f64,
    /// Deviations in sigma units.
    pub z_re: f64,
    /// Imaginary-part deviation in sigma units.
    pub z_im: f64,
    /// Both deviations within 4 sigma.
    pub pass: bool,
}

/// Fourth-moment verification report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WickReport {
    /// Level N.
    pub n: u32,
    /// Sample count.
    pub count: usize,
    /// Per-quadruple results.
    pub cases: Vec<WickCase>,
    /// All cases passed.
    pub pass: bool,
}

/// Covariance pairings of the complex coefficients: the conjugated pairing
/// is the Kronecker delta, the unconjugated one carries the (-1)^m phase
/// and flips the sign of m.
fn pair_conj(a: (i32, i32), b: (i32, i32)) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn pair_plain(a: (i32, i32), b: (i32, i32)) -> f64 {
    if a.0 == b.0 && a.1 == -b.1 {
        if a.1.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    } else {
        0.0
    }
}

/// Closed-form E[w_a w_b conj(w_c) conj(w_d)] by the pairing expansion.
pub fn wick_fourth_moment(quad: [(i32, i32); 4]) -> f64 {
    let [a, b, c, d] = quad;
    pair_plain(a, b) * pair_plain(c, d) + pair_conj(a, c) * pair_conj(b, d)
        + pair_conj(a, d) * pair_conj(b, c)
}

/// The default quadruple set: coincident real and complex modes, mixed
/// shells, phase-sensitive unconjugated pairings, and a fully scattered
/// quadruple.
pub fn default_wick_quadruples(n: u32) -> Vec<[(i32, i32); 4]> {
    let mut quads = vec![
        [(1, 0), (1, 0), (1, 0), (1, 0)],
        [(1, 1), (1, 1), (1, 1), (1, 1)],
        [(1, 1), (1, -1), (1, 1), (1, -1)],
        [(1, 1), (1, -1), (1, 0), (1, 0)],
    ];
    if n >= 3 {
        quads.push([(1, 1), (2, 1), (1, 1), (2, 1)]);
        quads.push([(2, 2), (2, -2), (1, 0), (1, 0)]);
        quads.push([(2, 1), (2, 1), (2, 1), (2, 1)]);
    }
    if n >= 4 {
        quads.push([(1, 1), (2, 0), (3, 1), (2, 2)]);
        quads.push([(3, 2), (3, -2), (2, 0), (2, 0)]);
    }
    quads
}

/// Monte Carlo verification of fourth moments against the pairing
/// expansion, with 4-sigma envelopes on both components.
pub fn wick_check(
    ens: &GaussianEnsemble,
    quadruples: &[[(i32, i32); 4]],
) -> Result<WickReport, MeasureError> {
    let count = ens.len();
    if count < 1000 {
        return Err(MeasureError::BadParameter(format!(
            "fourth-moment check needs at least 1000 samples, got {count}"
        )));
    }
    let lmax = ens.n as i32 - 1;
    for quad in quadruples {
        for &(l, m) in quad {
            if l < 1 || l > lmax || m.abs() > l {
                return Err(MeasureError::BadParameter(format!(
                    "mode ({l},{m}) out of range at level {}",
                    ens.n
                )));
            }
        }
    }
    let mut cases = Vec::with_capacity(quadruples.len());
    for &quad in quadruples {
        let truth = wick_fourth_moment(quad);
        let mut sum = Complex::new(0.0, 0.0);
        let mut sum_sq = Complex::new(0.0, 0.0);
        for sample in &ens.samples {
            let p = sample.coeff(quad[0].0, quad[0].1)
                * sample.coeff(quad[1].0, quad[1].1)
                * sample.coeff(quad[2].0, quad[2].1).conj()
                * sample.coeff(quad[3].0, quad[3].1).conj();
            sum += p;
            sum_sq += Complex::new(p.re * p.re, p.im * p.im);
        }
        let inv = 1.0 / count as f64;
        let mean = sum * inv;
        let var_re = (sum_sq.re * inv - mean.re * mean.re).max(0.0);
        let var_im = (sum_sq.im * inv - mean.im * mean.im).max(0.0);
        let sigma_re = (var_re / count as f64).sqrt();
        let sigma_im = (var_im / count as f64).sqrt();
        let z_re = (mean.re - truth).abs() / sigma_re.max(1e-300);
        let z_im = mean.im.abs() / sigma_im.max(1e-300);
        // A moment that vanishes sample-by-sample has zero spread; treat an
        // exact match as z = 0.
        let z_re = if sigma_re == 0.0 && (mean.re - truth).abs() == 0.0 { 0.0 } else { z_re };
        let z_im = if sigma_im == 0.0 && mean.im == 0.0 { 0.0 } else { z_im };
        let pass = z_re <= 4.0 && z_im <= 4.0;
        cases.push(WickCase {
            quad,
            truth,
            mean_re: mean.re,
            mean_im: mean.im,
            sigma_re,
            sigma_im,
            z_re,
            z_im,
            pass,
        });
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(WickReport { n: ens.n, count, cases, pass })
}

/// Exact E[||W||^2_{H^s}] = sum over degrees (2l+1)(l(l+1))^s.
pub fn sobolev_second_moment(n: u32, s: f64) -> f64 {
    (1..=(n as i32 - 1))
        .map(|l| f64::from(2 * l + 1) * f64::from(l * (l + 1)).powf(s))
        .sum()
}

/// Weighted Monte Carlo estimate of E[||W||^p_{H^s}] with its standard
/// error.
pub fn sobolev_moment(ens: &GaussianEnsemble, s: f64, p: f64) -> (f64, f64) {
    ens.weighted_mean(|w| w.sobolev_norm(s).powf(p))
}

/// Importance-reweighting report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsReport {
    /// Level N.
    pub n: u32,
    /// Reweighting strength.
    pub gamma: f64,
    /// Trace-power exponent.
    pub p_cas: i32,
    /// Normalization estimate: the mean weight.
    pub z_tilde: f64,
    /// Standard error of the normalization estimate.
    pub z_err: f64,
    /// Effective sample size after reweighting.
    pub ess: f64,
    /// ESS as a fraction of the sample count.
    pub ess_fraction: f64,
    /// Set when ESS fell below one percent of the count.
    pub degenerate: bool,
}

/// Attaches exp(-gamma Tr(W^p)) importance weights to an ensemble and
/// reports the normalization estimate and effective sample size. Only
/// exponents divisible by four (where the trace power is real and
/// nonnegative) are accepted.
pub fn gibbs_reweight(
    basis: &BasisSet,
    ens: &GaussianEnsemble,
    gamma: f64,
    p_cas: i32,
) -> Result<(GaussianEnsemble, GibbsReport), MeasureError> {
    if gamma < 0.0 {
        return Err(MeasureError::BadParameter(format!("gamma {gamma} must be nonnegative")));
    }
    if p_cas <= 0 || p_cas % 4 != 0 {
        return Err(MeasureError::CasimirPower(p_cas));
    }
    if basis.n() != ens.n {
        return Err(MeasureError::BadParameter(format!(
            "basis level {} does not match ensemble level {}",
            basis.n(),
            ens.n
        )));
    }
    let factors: Vec<f64> = crate::par::map_range(ens.len(), |i| {
        let w = &ens.samples[i];
        let casimir = trace_powers(w.matrix(basis), p_cas as usize)[p_cas as usize - 2];
        (-gamma * casimir).exp()
    });
    let weights: Vec<f64> =
        ens.weights.iter().zip(&factors).map(|(w, f)| w * f).collect();
    let count = ens.len() as f64;
    let z_tilde = factors.iter().sum::<f64>() / count;
    let z_var = factors.iter().map(|f| (f - z_tilde).powi(2)).sum::<f64>() / count;
    let z_err = (z_var / count).sqrt();
    let reweighted = GaussianEnsemble {
        n: ens.n,
        samples: ens.samples.clone(),
        weights,
        seed: ens.seed,
        stream: ens.stream,
    };
    let ess = reweighted.effective_sample_size();
    let ess_fraction = ess / count;
    let report = GibbsReport {
        n: ens.n,
        gamma,
        p_cas,
        z_tilde,
        z_err,
        ess,
        ess_fraction,
        degenerate: ess_fraction < 0.01,
    };
    Ok((reweighted, report))
}

/// Unitary eigendecomposition of a field matrix: purely imaginary
/// eigenvalues (ascending by imaginary part) and rank-one projectors.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Eigenvalues i theta_j of W.
    pub eigenvalues: Vec<Complex<f64>>,
    /// Rank-one spectral projectors e_j e_j^*.
    pub projectors: Vec<CMatrix>,
}

/// Diagonalizes the matrix of a field through its Hermitian companion -iW.
pub fn spectral_circulations(
    basis: &BasisSet,
    w: &QuantizedField,
) -> Result<SpectralDecomposition, MeasureError> {
    let m = w.matrix(basis);
    let herm = m.map(|z| Complex::new(z.im, -z.re));
    let eig = nalgebra::SymmetricEigen::try_new(herm, 1e-14, 0)
        .ok_or(MeasureError::Eigensolver)?;
    let dim = m.nrows();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).expect("finite eigenvalues")
    });
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut projectors = Vec::with_capacity(dim);
    for &j in &order {
        eigenvalues.push(Complex::new(0.0, eig.eigenvalues[j]));
        let v = eig.eigenvectors.column(j);
        let mut p = CMatrix::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                p[(r, c)] = v[r] * v[c].conj();
            }
        }
        projectors.push(p);
    }
    Ok(SpectralDecomposition { eigenvalues, projectors })
}

/// A named closed curve on the sphere with its quadrature resolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CurveSpec {
    /// Circle of constant colatitude.
    Latitude {
        /// Colatitude of the circle, in (0, pi).
        colatitude: f64,
        /// Number of uniform quadrature nodes.
        nodes: usize,
    },
    /// Great circle in the plane orthogonal to an axis.
    GreatCircle {
        /// Axis direction (need not be normalized).
        axis: [f64; 3],
        /// Number of uniform quadrature nodes.
        nodes: usize,
    },
}

impl CurveSpec {
    /// Latitude circle with the default resolution.
    pub fn latitude(colatitude: f64) -> Self {
        Self::Latitude { colatitude, nodes: 512 }
    }

    /// Great circle about an axis with the default resolution.
    pub fn great_circle(axis: [f64; 3]) -> Self {
        Self::GreatCircle { axis, nodes: 512 }
    }

    fn nodes(&self) -> usize {
        match self {
            Self::Latitude { nodes, .. } | Self::GreatCircle { nodes, .. } => *nodes,
        }
    }

    fn validate(&self, l_max: i32) -> Result<(), MeasureError> {
        if l_max < 2 {
            return Err(MeasureError::BadParameter(format!("band limit {l_max} below 2")));
        }
        match self {
            Self::Latitude { colatitude, .. } => {
                if !(*colatitude > 0.0 && *colatitude < std::f64::consts::PI) {
                    return Err(MeasureError::BadParameter(format!(
                        "colatitude {colatitude} outside (0, pi)"
                    )));
                }
            }
            Self::GreatCircle { axis, .. } => {
                let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    return Err(MeasureError::BadParameter("zero curve axis".into()));
                }
            }
        }
        let need = 4 * (l_max as usize + 1);
        if self.nodes() < need {
            return Err(MeasureError::UnderResolved { need, got: self.nodes() });
        }
        Ok(())
    }

    /// Position and tangent at parameter t in [0, 2 pi): returns
    /// (cos(theta), phi, tangent theta-component, tangent phi-component).
    fn frame(&self, t: f64) -> (f64, f64, f64, f64) {
        match self {
            Self::Latitude { colatitude, .. } => {
                ((*colatitude).cos(), t, 0.0, (*colatitude).sin())
            }
            Self::GreatCircle { axis, .. } => {
                let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
                let a = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
                let pick = if a[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
                let mut e1 = [
                    pick[1] * a[2] - pick[2] * a[1],
                    pick[2] * a[0] - pick[0] * a[2],
                    pick[0] * a[1] - pick[1] * a[0],
                ];
                let e1n = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut e1 {
                    *x /= e1n;
                }
                let e2 = [
                    a[1] * e1[2] - a[2] * e1[1],
                    a[2] * e1[0] - a[0] * e1[2],
                    a[0] * e1[1] - a[1] * e1[0],
                ];
                let (c, s) = (t.cos(), t.sin());
                let pos = [
                    c * e1[0] + s * e2[0],
                    c * e1[1] + s * e2[1],
                    c * e1[2] + s * e2[2],
                ];
                let tan = [
                    -s * e1[0] + c * e2[0],
                    -s * e1[1] + c * e2[1],
                    -s * e1[2] + c * e2[2],
                ];
                let x = pos[2].clamp(-1.0, 1.0);
                let phi = pos[1].atan2(pos[0]);
                let sin_theta = (1.0 - x * x).max(0.0).sqrt();
                let (cp, sp) = (phi.cos(), phi.sin());
                // Unit frame: theta-hat, phi-hat at the position.
                let theta_hat = [x * cp, x * sp, -sin_theta];
                let phi_hat = [-sp, cp, 0.0];
                let a_theta =
                    tan[0] * theta_hat[0] + tan[1] * theta_hat[1] + tan[2] * theta_hat[2];
                let a_phi = tan[0] * phi_hat[0] + tan[1] * phi_hat[1] + tan[2] * phi_hat[2];
                (x, phi, a_theta, a_phi)
            }
        }
    }
}

/// Circulation-variance report: the truncated quadratic form, its
/// per-degree contributions, and a heuristic tail estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CirculationReport {
    /// Band limit of the mode sum.
    pub l_max: i32,
    /// Quadrature nodes along the curve.
    pub nodes: usize,
    /// Truncated variance.
    pub variance: f64,
    /// Contribution of each degree 1..=l_max.
    pub per_degree: Vec<f64>,
    /// Heuristic tail bound: final-degree contribution times l_max.
    pub tail_estimate: f64,
}

/// Mode coefficients of the circulation functional: for each (l, m), the
/// line integral of the rotated gradient of Y_{l,m} along the curve,
/// divided by the Laplacian eigenvalue.
fn circulation_coefficients(
    curve: &CurveSpec,
    l_max: i32,
) -> Result<Vec<Complex<f64>>, MeasureError> {
    curve.validate(l_max)?;
    let nodes = curve.nodes();
    let dt = 2.0 * std::f64::consts::PI / nodes as f64;
    let mut coeffs = vec![Complex::new(0.0, 0.0); ((l_max + 1) * (l_max + 1) - 1) as usize];
    for j in 0..nodes {
        let t = dt * (j as f64 + 0.5);
        let (x, phi, a_theta, a_phi) = curve.frame(t);
        let sin_theta = (1.0 - x * x).max(0.0).sqrt();
        for (idx, (l, m)) in modes(l_max).enumerate() {
            // Rotated gradient dotted with the tangent:
            // dY/dtheta a_phi - (im Y / sin(theta)) a_theta.
            let mut v = Complex::new(theta_harmonic_deriv(l, m, x) * a_phi, 0.0);
            if m != 0 && a_theta != 0.0 {
                let y_over_sin = theta_harmonic(l, m, x) / sin_theta;
                v -= Complex::new(0.0, f64::from(m)) * y_over_sin * a_theta;
            }
            let e = Complex::from_polar(1.0, f64::from(m) * phi);
            coeffs[idx] += v * e * dt;
        }
    }
    for (idx, (l, _)) in modes(l_max).enumerate() {
        coeffs[idx] /= f64::from(l * (l + 1));
    }
    Ok(coeffs)
}

/// Variance of the circulation of a white-noise velocity field along a
/// closed curve: the mode sum of squared circulation coefficients up to a
/// band limit.
pub fn circulation_variance(
    curve: &CurveSpec,
    l_max: i32,
) -> Result<CirculationReport, MeasureError> {
    let coeffs = circulation_coefficients(curve, l_max)?;
    let mut per_degree = vec![0.0f64; l_max as usize];
    for (idx, (l, _)) in modes(l_max).enumerate() {
        per_degree[l as usize - 1] += coeffs[idx].norm_sqr();
    }
    let variance = per_degree.iter().sum();
    let tail_estimate = per_degree.last().copied().unwrap_or(0.0) * l_max as f64;
    Ok(CirculationReport {
        l_max,
        nodes: curve.nodes(),
        variance,
        per_degree,
        tail_estimate,
    })
}

/// Monte Carlo cross-check of the circulation variance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CirculationMcReport {
    /// Spectral (truth) variance at the band limit.
    pub spectral: f64,
    /// Empirical variance over the ensemble.
    pub empirical: f64,
    /// Standard error of the empirical variance.
    pub sigma: f64,
    /// Deviation in sigma units.
    pub z: f64,
    /// Sample count.
    pub count: usize,
    /// z within 4.
    pub pass: bool,
}

/// Samples band-limited white-noise vorticities, pushes each through the
/// circulation functional, and compares the empirical variance with the
/// spectral value.
pub fn circulation_mc(
    curve: &CurveSpec,
    l_max: i32,
    count: usize,
    seed: u64,
) -> Result<CirculationMcReport, MeasureError> {
    if count < 100 {
        return Err(MeasureError::BadParameter(format!(
            "circulation check needs at least 100 samples, got {count}"
        )));
    }
    let coeffs = circulation_coefficients(curve, l_max)?;
    let spectral: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    let n_equiv = (l_max + 1) as u32; // band-limited noise at degrees <= l_max
    let gammas: Vec<f64> = crate::par::map_range(count, |i| {
        let field = sample_field(n_equiv, seed, STREAM_CIRCULATION, i as u64);
        let mut gamma = Complex::new(0.0, 0.0);
        for (idx, (l, m)) in modes(l_max).enumerate() {
            gamma += field.coeff(l, m) * coeffs[idx];
        }
        gamma.re
    });
    let mean = gammas.iter().sum::<f64>() / count as f64;
    let empirical =
        gammas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0);
    let sigma = spectral * (2.0 / (count as f64 - 1.0)).sqrt();
    let z = (empirical - spectral).abs() / sigma;
    Ok(CirculationMcReport { spectral, empirical, sigma, z, count, pass: z <= 4.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::gauss_legendre;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn sampling_is_reproducible_and_stream_separated() {
        let a = sample_mu(5, 8, 42);
        let b = sample_mu(5, 8, 42);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.real_coeffs(), y.real_coeffs());
        }
        let c = sample_field(5, 42, STREAM_CIRCULATION, 0);
        assert_ne!(a.samples[0].real_coeffs(), c.real_coeffs());
        let d = sample_mu(5, 8, 43);
        assert_ne!(a.samples[0].real_coeffs(), d.samples[0].real_coeffs());
    }

    #[test]
    fn frobenius_second_moment_matches_dimension() {
        let count = 10_000;
        let ens = sample_mu(5, count, 7);
        let (mean, _) = sobolev_moment(&ens, 0.0, 2.0);
        let d = mode_count(5) as f64;
        // Var ||W||^2 = 2 d, so the 4-sigma envelope is 4 sqrt(2d / count).
        let envelope = 4.0 * (2.0 * d / count as f64).sqrt();
        assert!((mean - d).abs() <= envelope, "E||W||^2 = {mean}, want {d} +- {envelope}");
    }

    #[test]
    fn coefficient_means_are_centered() {
        let ens = sample_mu(4, 5_000, 11);
        for (l, m) in [(1, 0), (2, 1), (3, -2)] {
            let mut sum = Complex::new(0.0, 0.0);
            for s in &ens.samples {
                sum += s.coeff(l, m);
            }
            let mean = sum / ens.len() as f64;
            let envelope = 4.0 / (ens.len() as f64).sqrt();
            assert!(mean.norm() <= envelope, "mean {mean} outside envelope");
        }
    }

    #[test]
    fn covariance_is_identity_within_envelope() {
        let ens = sample_mu(3, 20_000, 1);
        let report = covariance_check(&ens).unwrap();
        assert!(report.pass, "covariance report {report:?}");
        assert!(covariance_check(&sample_mu(3, 50, 1)).is_err());
    }

    #[test]
    fn wick_truth_values() {
        assert_eq!(wick_fourth_moment([(1, 0), (1, 0), (1, 0), (1, 0)]), 3.0);
        assert_eq!(wick_fourth_moment([(1, 1), (1, 1), (1, 1), (1, 1)]), 2.0);
        assert_eq!(wick_fourth_moment([(1, 1), (1, -1), (1, 1), (1, -1)]), 2.0);
        assert_eq!(wick_fourth_moment([(1, 1), (1, -1), (1, 0), (1, 0)]), -1.0);
        assert_eq!(wick_fourth_moment([(2, 2), (2, -2), (1, 0), (1, 0)]), 1.0);
        assert_eq!(wick_fourth_moment([(1, 1), (2, 0), (3, 1), (2, 2)]), 0.0);
        assert_eq!(wick_fourth_moment([(1, 1), (2, 1), (1, 1), (2, 1)]), 1.0);
    }

    #[test]
    fn wick_monte_carlo_agrees() {
        let ens = sample_mu(4, 20_000, 3);
        let report = wick_check(&ens, &default_wick_quadruples(4)).unwrap();
        for case in &report.cases {
            assert!(case.pass, "case {case:?}");
        }
        assert!(report.pass);
    }

    #[test]
    fn sobolev_moments_match_closed_form() {
        assert_relative_eq!(sobolev_second_moment(9, 0.0), 80.0, max_relative = 1e-14);
        let ens = sample_mu(9, 4_000, 5);
        let (mean, err) = sobolev_moment(&ens, -1.5, 2.0);
        let truth = sobolev_second_moment(9, -1.5);
        assert!((mean - truth).abs() <= 4.0 * err, "mean {mean} truth {truth} err {err}");
        // Shell sums: per-doubling increments decay geometrically (like
        // 2^(-0.2)) for s = -1.1 but stay constant (2 ln 2) at s = -1.
        let inc = |s: f64, n: u32| sobolev_second_moment(2 * n, s) - sobolev_second_moment(n, s);
        let ratio = inc(-1.1, 64) / inc(-1.1, 32);
        assert_relative_eq!(ratio, 2.0f64.powf(-0.2), max_relative = 0.03);
        let log_growth = inc(-1.0, 64);
        assert_relative_eq!(log_growth, 2.0 * 2.0f64.ln(), max_relative = 0.05);
    }

    #[test]
    fn gibbs_weights_behave() {
        let basis = BasisSet::build(5);
        let ens = sample_mu(5, 500, 9);
        let (flat, report) = gibbs_reweight(&basis, &ens, 0.0, 4).unwrap();
        assert!(flat.weights.iter().all(|&w| w == 1.0));
        assert_eq!(report.z_tilde, 1.0);
        assert!(!report.degenerate);
        let (weighted, report) = gibbs_reweight(&basis, &ens, 0.1, 4).unwrap();
        assert!(weighted.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        assert!(report.z_tilde > 0.0 && report.z_tilde < 1.0);
        assert!(report.ess <= ens.len() as f64);
        // Quartic traces are nonnegative, so extreme gamma degenerates ESS.
        let (_, extreme) = gibbs_reweight(&basis, &ens, 50.0, 4).unwrap();
        assert!(extreme.degenerate, "ess fraction {}", extreme.ess_fraction);
        assert!(matches!(
            gibbs_reweight(&basis, &ens, 0.1, 2),
            Err(MeasureError::CasimirPower(2))
        ));
        assert!(gibbs_reweight(&basis, &ens, -1.0, 4).is_err());
    }

    #[test]
    fn gibbs_normalization_across_levels() {
        for n in [3, 5] {
            let basis = BasisSet::build(n);
            let ens = sample_mu(n, 400, 13);
            let (_, report) = gibbs_reweight(&basis, &ens, 0.1, 4).unwrap();
            assert!(report.z_tilde.is_finite() && report.z_tilde > 0.0);
            assert!(report.z_err > 0.0);
        }
    }

    #[test]
    fn spectral_decomposition_recovers_traces() {
        let basis = BasisSet::build(5);
        let w = sample_field(5, 21, STREAM_MU, 0);
        let dec = spectral_circulations(&basis, &w).unwrap();
        let total: Complex<f64> = dec.eigenvalues.iter().sum();
        assert_abs_diff_eq!(total.norm(), 0.0, epsilon = 1e-12);
        let m = w.matrix(&basis);
        for k in 2..=4usize {
            let direct = trace_powers(m, k)[k - 2];
            let from_eigs: Complex<f64> =
                dec.eigenvalues.iter().map(|l| l.powu(k as u32)).sum();
            let part = if k % 2 == 0 { from_eigs.re } else { from_eigs.im };
            assert_abs_diff_eq!(part, direct, epsilon = 1e-10 * direct.abs().max(1.0));
        }
        // Projector orthogonality and eigenvalue recovery by pairing.
        for (i, p) in dec.projectors.iter().enumerate() {
            for (j, q) in dec.projectors.iter().enumerate() {
                let mut tr = Complex::new(0.0, 0.0);
                for r in 0..5 {
                    for c in 0..5 {
                        tr += p[(r, c)].conj() * q[(r, c)];
                    }
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(tr.re, want, epsilon = 1e-10);
                assert_abs_diff_eq!(tr.im, 0.0, epsilon = 1e-10);
            }
            let mut pair = Complex::new(0.0, 0.0);
            for r in 0..5 {
                for c in 0..5 {
                    pair += m[(r, c)].conj() * p[(r, c)];
                }
            }
            let lam = dec.eigenvalues[i];
            assert_abs_diff_eq!((pair - lam.conj()).norm(), 0.0, epsilon = 1e-10);
        }
        // Ascending order of the imaginary parts.
        assert!(dec.eigenvalues.windows(2).all(|w| w[0].im <= w[1].im));
    }

    #[test]
    fn latitude_circulation_matches_frozen_value() {
        let curve = CurveSpec::latitude(std::f64::consts::PI / 3.0);
        let report = circulation_variance(&curve, 8).unwrap();
        assert_relative_eq!(report.variance, 2.1756642231, max_relative = 1e-9);
        assert_eq!(report.per_degree.len(), 8);
        assert!(report.tail_estimate > 0.0);
    }

    #[test]
    fn latitude_derivative_route_equals_interior_route() {
        // The line integral of the rotated gradient equals the Laplacian
        // eigenvalue times the polar-cap average, by the divergence theorem:
        // 2 pi sin(t0) dY_{l,0}/dtheta (t0) = -l(l+1) * 2 pi Int_cap Y_{l,0}.
        let theta0 = std::f64::consts::PI / 3.0;
        let x0 = theta0.cos();
        let (nodes, weights) = gauss_legendre(64);
        for l in 1..=8 {
            let lhs = theta0.sin() * theta_harmonic_deriv(l, 0, x0);
            // Map [-1, 1] to [x0, 1].
            let half = 0.5 * (1.0 - x0);
            let mid = 0.5 * (1.0 + x0);
            let cap: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&u, &w)| w * half * theta_harmonic(l, 0, mid + half * u))
                .sum();
            let rhs = -f64::from(l * (l + 1)) * cap;
            assert_relative_eq!(lhs, rhs, max_relative = 1e-11);
        }
    }

    #[test]
    fn circulation_is_rotation_invariant_for_great_circles() {
        let about_z = circulation_variance(&CurveSpec::great_circle([0.0, 0.0, 1.0]), 6)
            .unwrap()
            .variance;
        let about_x = circulation_variance(&CurveSpec::great_circle([1.0, 0.0, 0.0]), 6)
            .unwrap()
            .variance;
        let tilted = circulation_variance(&CurveSpec::great_circle([1.0, 1.0, 1.0]), 6)
            .unwrap()
            .variance;
        assert_relative_eq!(about_z, about_x, max_relative = 1e-10);
        assert_relative_eq!(about_z, tilted, max_relative = 1e-10);
        // The equator is the colatitude pi/2 circle.
        let equator = circulation_variance(&CurveSpec::latitude(std::f64::consts::PI / 2.0), 6)
            .unwrap()
            .variance;
        assert_relative_eq!(about_z, equator, max_relative = 1e-10);
        // Reversing orientation leaves the quadratic form unchanged.
        let reversed = circulation_variance(&CurveSpec::great_circle([0.0, 0.0, -1.0]), 6)
            .unwrap()
            .variance;
        assert_relative_eq!(about_z, reversed, max_relative = 1e-12);
    }

    #[test]
    fn circulation_rejects_bad_inputs() {
        assert!(circulation_variance(&CurveSpec::latitude(0.0), 8).is_err());
        assert!(circulation_variance(&CurveSpec::great_circle([0.0; 3]), 8).is_err());
        let coarse = CurveSpec::Latitude { colatitude: 1.0, nodes: 8 };
        assert!(matches!(
            circulation_variance(&coarse, 8),
            Err(MeasureError::UnderResolved { .. })
        ));
    }

    #[test]
    fn circulation_monte_carlo_matches_spectral() {
        let curve = CurveSpec::latitude(std::f64::consts::PI / 3.0);
        let report = circulation_mc(&curve, 4, 4_000, 17).unwrap();
        assert!(report.pass, "report {report:?}");
        let great = CurveSpec::great_circle([0.0, 1.0, 0.5]);
        let report = circulation_mc(&great, 4, 4_000, 19).unwrap();
        assert!(report.pass, "report {report:?}");
    }

    #[test]
    fn band_limited_pairings_are_exact_and_gaussian() {
        // Projection preserves the pairing once the level covers the band.
        let mut phi = crate::basis::SmoothField::zero(3);
        phi.set_mode(1, 0, Complex::new(0.5, 0.0));
        phi.set_mode(2, 1, Complex::new(0.3, -0.2));
        phi.set_mode(3, 3, Complex::new(-0.1, 0.4));
        let norm_sq = phi.l2_norm().powi(2);
        for n in [4, 5, 9] {
            let p = phi.project(n);
            assert_relative_eq!(p.sobolev_norm(0.0).powi(2), norm_sq, max_relative = 1e-14);
        }
        // The law of the pairing <W, phi> is exactly N(0, ||phi||^2).
        let proj = phi.project(5);
        let ens = sample_mu(5, 10_000, 23);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for s in &ens.samples {
            let v = s.inner(&proj).unwrap().re;
            sum += v;
            sum_sq += v * v;
        }
        let count = ens.len() as f64;
        let mean = sum / count;
        let var = sum_sq / count - mean * mean;
        assert!(mean.abs() <= 4.0 * (norm_sq / count).sqrt());
        assert!((var - norm_sq).abs() <= 4.0 * norm_sq * (2.0 / count).sqrt());
    }
}
