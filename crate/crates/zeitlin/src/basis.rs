//! The spherical-matrix basis of su(N), the isometry between coefficient
//! space and matrices, spectral Laplacian powers and Sobolev norms, and a
//! spherical-quadrature oracle for the continuous structure constants.
//!
//! Matrix elements are evaluated in exact arithmetic and rounded once, so
//! orthonormality and bracket-closure residuals sit at roundoff rather than
//! accumulating evaluation error. Coefficients are stored over the real
//! orthonormal basis (the m = 0 element plus cosine/sine combinations for
//! m > 0), which makes the Gaussian measure of the `measures` module a
//! literal i.i.d. standard normal vector and keeps every stored field real;
//! the complex coefficient view follows the convention
//! conj(w_{l,m}) = (-1)^m w_{l,-m}.

use crate::structconst::{BracketScale, TripleIndex};
use crate::wigner::exact::{three_j_exact, SignedSqrt};
use nalgebra::DMatrix;
use num_complex::Complex;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

/// Complex dense matrix type used throughout the crate.
pub type CMatrix = DMatrix<Complex<f64>>;

/// Errors from field operations, quadrature setup, and serialization.
#[derive(Debug, Error)]
pub enum BasisError {
    /// Two fields or a field and basis live at different levels N.
    #[error("level mismatch: {a} vs {b}")]
    LevelMismatch { a: u32, b: u32 },
    /// A quadrature grid below the spectral-exactness bound was supplied.
    #[error("grid too coarse: need >= {need_theta} colatitude and >= {need_phi} longitude nodes, got {got_theta} x {got_phi}")]
    GridTooCoarse { need_theta: usize, need_phi: usize, got_theta: usize, got_phi: usize },
    /// A mode (l, m) outside 1 <= l <= N-1, |m| <= l was addressed.
    #[error("mode (l={l}, m={m}) out of range for level {n}")]
    ModeRange { l: i32, m: i32, n: u32 },
    /// Underlying i/o failure.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    /// A serialized field is malformed.
    #[error("bad field data: {0}")]
    Format(String),
}

/// Number of basis modes at level N: N^2 - 1.
pub fn mode_count(n: u32) -> usize {
    (n as usize) * (n as usize) - 1
}

/// Canonical mode order: l = 1..=lmax, m = -l..=l within each degree.
pub fn modes(lmax: i32) -> impl Iterator<Item = (i32, i32)> {
    (1..=lmax).flat_map(|l| (-l..=l).map(move |m| (l, m)))
}

/// Position of (l, m) in canonical mode order.
fn mode_index(l: i32, m: i32) -> usize {
    debug_assert!(l >= 1 && m.abs() <= l);
    (l * l - 1 + m + l) as usize
}

/// Position of the real-basis component: slot 0 of a degree block is m = 0,
/// slots 2m-1 and 2m are the cosine and sine components for m = 1..=l.
fn real_index(l: i32, slot: i32) -> usize {
    debug_assert!(l >= 1 && (0..2 * l + 1).contains(&slot));
    (l * l - 1 + slot) as usize
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// The orthonormal spherical-matrix basis T_{l,m} of su(N).
///
/// Elements satisfy Tr(T_a^* T_b) = delta_ab, are eigenvectors of the
/// spectral Laplacian with eigenvalue -l(l+1), and obey
/// T_{l,m}^* = -(-1)^m T_{l,-m}, mirroring the harmonic conjugation rule.
pub struct BasisSet {
    n: u32,
    matrices: Vec<CMatrix>,
}

impl BasisSet {
    /// Builds the level-N basis from exact matrix elements.
    ///
    /// The Hermitian precursor has entries sqrt(2l+1) (-1)^i times a
    /// spin-coupling coefficient on the band j = i + m; multiplying by i
    /// yields the stored elements, whose commutator coefficients reproduce
    /// the discrete structure constants with the documented signs.
    pub fn build(n: u32) -> Self {
        assert!(n >= 2, "level must be at least 2");
        let lmax = n as i32 - 1;
        let s = n as i32 - 1; // doubled spin of the representation
        let dim = n as usize;
        let dims_sqrt = |l: i32| {
            SignedSqrt::from_parts(1, BigRational::from_integer((2 * l + 1).into()))
        };
        let matrices = crate::par::map_range(mode_count(n), |a| {
            let (l, m) = modes(lmax).nth(a).expect("mode index in range");
            let pre = dims_sqrt(l);
            let mut t = CMatrix::zeros(dim, dim);
            for i in 0..dim as i32 {
                let j = i + m;
                if !(0..dim as i32).contains(&j) {
                    continue;
                }
                // Doubled projections: 2 m1 = N-1-2i, 2 m2 = N-1-2j.
                let tm1 = s - 2 * i;
                let tm2 = s - 2 * j;
                let tj = three_j_exact(s, 2 * l, s, -tm1, 2 * m, tm2);
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let value = sign * pre.mul(&tj).to_f64();
                t[(i as usize, j as usize)] = Complex::new(0.0, value);
            }
            t
        });
        Self { n, matrices }
    }

    /// Level N.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of basis elements, N^2 - 1.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    /// True only for the degenerate empty basis (never constructed).
    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Basis matrix T_{l,m}.
    pub fn matrix(&self, l: i32, m: i32) -> &CMatrix {
        assert!(l >= 1 && l < self.n as i32 && m.abs() <= l, "mode ({l},{m}) out of range");
        &self.matrices[mode_index(l, m)]
    }

    /// Commutator-coefficient oracle: Im Tr(T_{lbar,mbar}^* s_N [T_{l,m}, T_{l',m'}]).
    ///
    /// Equals the quantized structure constant; the real part of the trace
    /// vanishes identically and is discarded.
    pub fn bracket_coeff(&self, idx: &TripleIndex, scale: BracketScale) -> f64 {
        let a = self.matrix(idx.l, idx.m);
        let b = self.matrix(idx.lp, idx.mp);
        let c = self.matrix(idx.lbar, idx.mbar);
        let comm = a * b - b * a;
        let mut tr = Complex::new(0.0, 0.0);
        for i in 0..self.n as usize {
            for k in 0..self.n as usize {
                tr += c[(k, i)].conj() * comm[(k, i)];
            }
        }
        scale.factor(self.n) * tr.im
    }
}

/// A truncated spherical-harmonic expansion with degrees up to a cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothField {
    lmax: i32,
    real: Vec<f64>,
}

/// An su(N) field: real coefficients over the orthonormal basis, with a
/// lazily built matrix representation.
#[derive(Debug)]
pub struct QuantizedField {
    n: u32,
    real: Vec<f64>,
    matrix: OnceLock<CMatrix>,
}

impl Clone for QuantizedField {
    fn clone(&self) -> Self {
        let matrix = OnceLock::new();
        if let Some(m) = self.matrix.get() {
            let _ = matrix.set(m.clone());
        }
        Self { n: self.n, real: self.real.clone(), matrix }
    }
}

impl PartialEq for QuantizedField {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.real == other.real
    }
}

/// Complex coefficient from a real block: m = 0 is the real slot itself;
/// m > 0 is (x + iy)/sqrt(2); m < 0 follows from conjugation.
fn coeff_from_real(real: &[f64], l: i32, m: i32) -> Complex<f64> {
    if m == 0 {
        return Complex::new(real[real_index(l, 0)], 0.0);
    }
    let ma = m.abs();
    let x = real[real_index(l, 2 * ma - 1)];
    let y = real[real_index(l, 2 * ma)];
    if m > 0 {
        Complex::new(x / SQRT_2, y / SQRT_2)
    } else {
        let sign = if ma % 2 == 0 { 1.0 } else { -1.0 };
        Complex::new(sign * x / SQRT_2, -sign * y / SQRT_2)
    }
}

/// Writes the complex coefficient at (l, m) into a real block, routing
/// negative m through the conjugation rule.
fn set_coeff_in_real(real: &mut [f64], l: i32, m: i32, z: Complex<f64>) {
    if m == 0 {
        real[real_index(l, 0)] = z.re;
        return;
    }
    let ma = m.abs();
    let zp = if m > 0 {
        z
    } else {
        let sign = if ma % 2 == 0 { 1.0 } else { -1.0 };
        Complex::new(sign * z.re, -sign * z.im)
    };
    real[real_index(l, 2 * ma - 1)] = SQRT_2 * zp.re;
    real[real_index(l, 2 * ma)] = SQRT_2 * zp.im;
}

impl QuantizedField {
    /// The zero field at level N.
    pub fn zero(n: u32) -> Self {
        assert!(n >= 2);
        Self { n, real: vec![0.0; mode_count(n)], matrix: OnceLock::new() }
    }

    /// Wraps a real coefficient vector of length N^2 - 1.
    pub fn from_real(n: u32, real: Vec<f64>) -> Self {
        assert_eq!(real.len(), mode_count(n), "coefficient count must be N^2 - 1");
        Self { n, real, matrix: OnceLock::new() }
    }

    /// Level N.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Largest degree carried, N - 1.
    pub fn lmax(&self) -> i32 {
        self.n as i32 - 1
    }

    /// Real coefficients over the orthonormal real basis.
    pub fn real_coeffs(&self) -> &[f64] {
        &self.real
    }

    /// Complex coefficient w_{l,m}.
    pub fn coeff(&self, l: i32, m: i32) -> Complex<f64> {
        assert!(l >= 1 && l <= self.lmax() && m.abs() <= l, "mode ({l},{m}) out of range");
        coeff_from_real(&self.real, l, m)
    }

    /// Sets w_{l,m} = z (and its conjugate partner), invalidating the cache.
    /// For m = 0 only the real part is meaningful and the imaginary part
    /// must vanish.
    pub fn set_mode(&mut self, l: i32, m: i32, z: Complex<f64>) {
        assert!(l >= 1 && l <= self.lmax() && m.abs() <= l, "mode ({l},{m}) out of range");
        assert!(m != 0 || z.im == 0.0, "m = 0 coefficients are real");
        set_coeff_in_real(&mut self.real, l, m, z);
        self.matrix = OnceLock::new();
    }

    /// Projects a skew-Hermitian matrix onto the basis: w_{l,m} = Tr(T_{l,m}^* W).
    pub fn from_matrix(basis: &BasisSet, w: &CMatrix) -> Self {
        let n = basis.n();
        let mut real = vec![0.0; mode_count(n)];
        for l in 1..=(n as i32 - 1) {
            for m in 0..=l {
                let t = basis.matrix(l, m);
                let mut tr = Complex::new(0.0, 0.0);
                for j in 0..n as usize {
                    let i = j as i32 - m;
                    if (0..n as i32).contains(&i) {
                        tr += t[(i as usize, j as usize)].conj() * w[(i as usize, j as usize)];
                    }
                }
                if m == 0 {
                    real[real_index(l, 0)] = tr.re;
                } else {
                    real[real_index(l, 2 * m - 1)] = SQRT_2 * tr.re;
                    real[real_index(l, 2 * m)] = SQRT_2 * tr.im;
                }
            }
        }
        Self { n, real, matrix: OnceLock::new() }
    }

    /// The matrix representation sum of w_{l,m} T_{l,m}, cached after the
    /// first call.
    pub fn matrix(&self, basis: &BasisSet) -> &CMatrix {
        assert_eq!(basis.n(), self.n, "basis level must match field level");
        self.matrix.get_or_init(|| {
            let dim = self.n as usize;
            let mut w = CMatrix::zeros(dim, dim);
            for (l, m) in modes(self.lmax()) {
                let z = self.coeff(l, m);
                if z.re == 0.0 && z.im == 0.0 {
                    continue;
                }
                let t = basis.matrix(l, m);
                for i in 0..dim as i32 {
                    let j = i + m;
                    if (0..dim as i32).contains(&j) {
                        w[(i as usize, j as usize)] += z * t[(i as usize, j as usize)];
                    }
                }
            }
            w
        })
    }

    /// Frobenius inner product Tr(A^* B) = sum of conj(w_A) w_B; real for
    /// fields satisfying the conjugation rule, returned on the real axis.
    pub fn inner(&self, other: &Self) -> Result<Complex<f64>, BasisError> {
        if self.n != other.n {
            return Err(BasisError::LevelMismatch { a: self.n, b: other.n });
        }
        let dot: f64 = self.real.iter().zip(&other.real).map(|(a, b)| a * b).sum();
        Ok(Complex::new(dot, 0.0))
    }

    /// Multiplies every coefficient by a real factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let real = self.real.iter().map(|x| factor * x).collect();
        Self { n: self.n, real, matrix: OnceLock::new() }
    }

    /// Applies (-Laplacian)^s: multiplies each degree-l block by (l(l+1))^s.
    pub fn laplacian_pow(&self, s: f64) -> Self {
        let mut real = self.real.clone();
        for l in 1..=self.lmax() {
            let factor = f64::from(l * (l + 1)).powf(s);
            for slot in 0..2 * l + 1 {
                real[real_index(l, slot)] *= factor;
            }
        }
        Self { n: self.n, real, matrix: OnceLock::new() }
    }

    /// Sobolev norm sqrt(sum (l(l+1))^s |w_{l,m}|^2); s = 0 is Frobenius.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for l in 1..=self.lmax() {
            let factor = f64::from(l * (l + 1)).powf(s);
            let block: f64 = (0..2 * l + 1)
                .map(|slot| self.real[real_index(l, slot)].powi(2))
                .sum();
            total += factor * block;
        }
        total.sqrt()
    }

    /// Copies the coefficients into a smooth field with cutoff N - 1.
    pub fn lift(&self) -> SmoothField {
        SmoothField { lmax: self.lmax(), real: self.real.clone() }
    }

    /// Serializes as JSON: level and the complex coefficient list (l, m, re, im)
    /// in canonical mode order.
    pub fn write_json<W: Write>(&self, w: W) -> Result<(), BasisError> {
        let coeffs: Vec<(i32, i32, f64, f64)> = modes(self.lmax())
            .map(|(l, m)| {
                let z = self.coeff(l, m);
                (l, m, z.re, z.im)
            })
            .collect();
        serde_json::to_writer(w, &FieldJson { n: self.n, coeffs })
            .map_err(|e| BasisError::Format(e.to_string()))
    }

    /// Reads a field written by [`write_json`](Self::write_json), checking
    /// mode order and the conjugation rule.
    pub fn read_json<R: Read>(r: R) -> Result<Self, BasisError> {
        let parsed: FieldJson =
            serde_json::from_reader(r).map_err(|e| BasisError::Format(e.to_string()))?;
        Self::from_complex_list(parsed.n, &parsed.coeffs)
    }

    /// Serializes in the raw binary layout: magic "ZFLD", N as u32, then
    /// little-endian (re, im) f64 pairs in canonical mode order.
    pub fn write_zfld(&self, path: &Path) -> Result<(), BasisError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(ZFLD_MAGIC)?;
        w.write_all(&self.n.to_le_bytes())?;
        for (l, m) in modes(self.lmax()) {
            let z = self.coeff(l, m);
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`write_zfld`](Self::write_zfld).
    pub fn read_zfld(path: &Path) -> Result<Self, BasisError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ZFLD_MAGIC {
            return Err(BasisError::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word);
        if n < 2 {
            return Err(BasisError::Format(format!("bad level {n}")));
        }
        let lmax = n as i32 - 1;
        let mut coeffs = Vec::with_capacity(mode_count(n));
        let mut dword = [0u8; 8];
        for (l, m) in modes(lmax) {
            r.read_exact(&mut dword)?;
            let re = f64::from_le_bytes(dword);
            r.read_exact(&mut dword)?;
            let im = f64::from_le_bytes(dword);
            coeffs.push((l, m, re, im));
        }
        Self::from_complex_list(n, &coeffs)
    }

    /// Builds a field from a complete canonical complex coefficient list,
    /// verifying order and conjugation consistency.
    fn from_complex_list(n: u32, coeffs: &[(i32, i32, f64, f64)]) -> Result<Self, BasisError> {
        if n < 2 || coeffs.len() != mode_count(n) {
            return Err(BasisError::Format(format!(
                "expected {} coefficients for level {n}",
                mode_count(n.max(2))
            )));
        }
        let lmax = n as i32 - 1;
        for ((l, m), &(gl, gm, ..)) in modes(lmax).zip(coeffs) {
            if (l, m) != (gl, gm) {
                return Err(BasisError::Format(format!(
                    "coefficient order: expected ({l},{m}), got ({gl},{gm})"
                )));
            }
        }
        let mut field = Self::zero(n);
        for &(l, m, re, im) in coeffs.iter().filter(|c| c.1 >= 0) {
            field.set_mode(l, m, Complex::new(re, if m == 0 { 0.0 } else { im }));
        }
        // The stored m < 0 half must agree with conjugation to roundoff.
        for &(l, m, re, im) in coeffs.iter().filter(|c| c.1 < 0) {
            let want = field.coeff(l, m);
            let scale = 1.0f64.max(want.norm());
            if (want.re - re).abs() > 1e-12 * scale || (want.im - im).abs() > 1e-12 * scale {
                return Err(BasisError::Format(format!(
                    "conjugation rule violated at ({l},{m})"
                )));
            }
        }
        // m = 0 imaginary parts must vanish for a real field.
        for &(l, m, _, im) in coeffs.iter().filter(|c| c.1 == 0) {
            if im.abs() > 1e-12 {
                return Err(BasisError::Format(format!("nonreal m=0 coefficient at l={l}, m={m}")));
            }
        }
        Ok(field)
    }
}

const ZFLD_MAGIC: &[u8; 4] = b"ZFLD";

#[derive(Serialize, Deserialize)]
struct FieldJson {
    n: u32,
    coeffs: Vec<(i32, i32, f64, f64)>,
}

impl SmoothField {
    /// The zero expansion with degrees up to lmax.
    pub fn zero(lmax: i32) -> Self {
        assert!(lmax >= 1);
        Self { lmax, real: vec![0.0; ((lmax + 1) * (lmax + 1) - 1) as usize] }
    }

    /// Degree cutoff.
    pub fn lmax(&self) -> i32 {
        self.lmax
    }

    /// Complex coefficient at (l, m).
    pub fn coeff(&self, l: i32, m: i32) -> Complex<f64> {
        assert!(l >= 1 && l <= self.lmax && m.abs() <= l);
        coeff_from_real(&self.real, l, m)
    }

    /// Sets the coefficient at (l, m) and its conjugate partner.
    pub fn set_mode(&mut self, l: i32, m: i32, z: Complex<f64>) {
        assert!(l >= 1 && l <= self.lmax && m.abs() <= l);
        assert!(m != 0 || z.im == 0.0, "m = 0 coefficients are real");
        set_coeff_in_real(&mut self.real, l, m, z);
    }

    /// Applies (-Laplacian)^s coefficient-wise.
    pub fn laplacian_pow(&self, s: f64) -> Self {
        let mut real = self.real.clone();
        for l in 1..=self.lmax {
            let factor = f64::from(l * (l + 1)).powf(s);
            for slot in 0..2 * l + 1 {
                real[real_index(l, slot)] *= factor;
            }
        }
        Self { lmax: self.lmax, real }
    }

    /// L^2 norm of the expansion; equals the Frobenius norm after projection
    /// when no degree exceeds N - 1.
    pub fn l2_norm(&self) -> f64 {
        self.real.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Truncates to degrees <= N-1, the coefficient-space projection.
    pub fn project(&self, n: u32) -> QuantizedField {
        let mut field = QuantizedField::zero(n);
        let keep = self.lmax.min(n as i32 - 1);
        let len = ((keep + 1) * (keep + 1) - 1) as usize;
        field.real[..len].copy_from_slice(&self.real[..len]);
        field
    }
}

/// Product quadrature grid: Gauss-Legendre in colatitude, uniform in
/// longitude.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureGrid {
    /// Number of Gauss-Legendre colatitude nodes.
    pub n_theta: usize,
    /// Number of uniform longitude nodes.
    pub n_phi: usize,
}

impl QuadratureGrid {
    /// The smallest grid meeting the spectral-exactness bound for a triple:
    /// 2(l + l' + lbar) colatitude nodes and 4 max(|m|) longitude nodes.
    pub fn for_triple(idx: &TripleIndex) -> Self {
        let order = (idx.l + idx.lp + idx.lbar) as usize;
        let max_m = idx.m.abs().max(idx.mp.abs()).max(idx.mbar.abs()).max(1) as usize;
        Self { n_theta: 2 * order, n_phi: 4 * max_m }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = (n as f64) * (x * p - pm1) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Fully normalized colatitude part of Y_{l,m} at cos(theta) = x, with the
/// (-1)^m phase folded in; negative m via conjugation symmetry.
pub(crate) fn theta_harmonic(l: i32, m: i32, x: f64) -> f64 {
    debug_assert!(l >= 0 && m.abs() <= l);
    let ma = m.abs();
    // Diagonal ascent keeps full normalization: each step multiplies by
    // -sqrt((2p+1)/(2p)) sin(theta), starting from the constant harmonic.
    let mut pmm = (4.0 * std::f64::consts::PI).sqrt().recip();
    let sin_theta = (1.0 - x * x).max(0.0).sqrt();
    for p in 1..=ma {
        pmm *= -(f64::from(2 * p + 1) / f64::from(2 * p)).sqrt() * sin_theta;
    }
    let mut value = if l == ma {
        pmm
    } else {
        let mut plm1 = pmm;
        let mut pl = (f64::from(2 * ma + 3)).sqrt() * x * pmm;
        for ll in (ma + 2)..=l {
            let llf = f64::from(ll);
            let mf = f64::from(ma);
            let a = ((4.0 * llf * llf - 1.0) / (llf * llf - mf * mf)).sqrt();
            let b = (((2.0 * llf + 1.0) * ((llf - 1.0).powi(2) - mf * mf))
                / ((2.0 * llf - 3.0) * (llf * llf - mf * mf)))
                .sqrt();
            let next = a * x * pl - b * plm1;
            plm1 = pl;
            pl = next;
        }
        pl
    };
    if m < 0 && ma % 2 == 1 {
        value = -value;
    }
    value
}

/// Colatitude derivative of the theta part of Y_{l,m}: the ladder
/// combination (A+ Ytheta_{l,m+1} - A- Ytheta_{l,m-1}) / 2 with
/// A+- = sqrt((l -+ m)(l +- m + 1)).
pub(crate) fn theta_harmonic_deriv(l: i32, m: i32, x: f64) -> f64 {
    let mut d = 0.0;
    if m < l {
        let ap = (f64::from(l - m) * f64::from(l + m + 1)).sqrt();
        d += 0.5 * ap * theta_harmonic(l, m + 1, x);
    }
    if m > -l {
        let am = (f64::from(l + m) * f64::from(l - m + 1)).sqrt();
        d -= 0.5 * am * theta_harmonic(l, m - 1, x);
    }
    d
}

/// Independent quadrature oracle for the continuous structure constant:
/// evaluates the integral of conj(Y_{lbar,mbar}) {Y_{l,m}, Y_{l',m'}} over
/// the sphere by product quadrature and rescales it to the normalization of
/// [`continuous_c`](crate::structconst::continuous_c).
pub fn quadrature_bracket_oracle(
    idx: &TripleIndex,
    grid: QuadratureGrid,
) -> Result<f64, BasisError> {
    let bound = QuadratureGrid::for_triple(idx);
    if grid.n_theta < bound.n_theta || grid.n_phi < bound.n_phi {
        return Err(BasisError::GridTooCoarse {
            need_theta: bound.n_theta,
            need_phi: bound.n_phi,
            got_theta: grid.n_theta,
            got_phi: grid.n_phi,
        });
    }
    let (nodes, weights) = gauss_legendre(grid.n_theta);
    let dphi = 2.0 * std::f64::consts::PI / grid.n_phi as f64;
    let mut integral = Complex::new(0.0, 0.0);
    for (&x, &w) in nodes.iter().zip(&weights) {
        let sin_theta = (1.0 - x * x).sqrt();
        // Theta-dependent factors of the three harmonics and derivatives.
        let ya = theta_harmonic(idx.l, idx.m, x);
        let yb = theta_harmonic(idx.lp, idx.mp, x);
        let yc = theta_harmonic(idx.lbar, idx.mbar, x);
        let da = theta_harmonic_deriv(idx.l, idx.m, x);
        let db = theta_harmonic_deriv(idx.lp, idx.mp, x);
        for j in 0..grid.n_phi {
            let phi = dphi * j as f64;
            let ea = Complex::from_polar(1.0, f64::from(idx.m) * phi);
            let eb = Complex::from_polar(1.0, f64::from(idx.mp) * phi);
            let ec = Complex::from_polar(1.0, f64::from(idx.mbar) * phi);
            // {f,g} = (df/dphi dg/dtheta - df/dtheta dg/dphi) / sin(theta).
            let dpa = Complex::new(0.0, f64::from(idx.m)) * ya * ea;
            let dpb = Complex::new(0.0, f64::from(idx.mp)) * yb * eb;
            let bracket = (dpa * (db * eb) - (da * ea) * dpb) / sin_theta;
            integral += w * dphi * (yc * ec).conj() * bracket;
        }
    }
    // Table normalization: the raw integral is i/(2 sqrt(4 pi)) times the
    // tabulated constant, so multiply by 2 sqrt(4 pi) and drop i.
    Ok(2.0 * (4.0 * std::f64::consts::PI).sqrt() * integral.im)
}
