//! Structure constants of the spherical-harmonic Poisson algebra and of the
//! su(N) commutator algebra that quantizes it, together with their
//! difference, the asymptotic envelopes both satisfy, and the flat-torus
//! counterparts.
//!
//! Conventions. Degrees l, l', lbar are positive integers with |m| <= l; the
//! order sum L = l + l' + lbar must be odd for a constant to be nonzero, and
//! the projection sum m + m' = mbar is enforced as a selection rule. Discrete
//! tables store the raw commutator coefficient G with
//! [T_a, T_b] = i sum_c G_ab^c T_c; the bracket scale s_N multiplying G into
//! the quantized structure constant is applied at lookup time, so cache files
//! stay valid under a change of scale convention.

use crate::par;
use crate::wigner::exact::{
    fact, six_j_equal_bottom_expanded, three_j_exact, triangle_delta_sq, SignedSqrt,
};
use crate::wigner::{lf, three_j_raw, tri_ok};
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Errors from index validation, domain checks, and table i/o.
#[derive(Debug, Error)]
pub enum StructError {
    /// A degree/projection pair violates 1 <= l or |m| <= l.
    #[error("index out of range: need 1 <= l and |m| <= l, got l={l}, m={m}")]
    IndexRange { l: i32, m: i32 },
    /// The three degrees do not close a triangle.
    #[error("triangle violation for degrees ({0}, {1}, {2})")]
    Triangle(i32, i32, i32),
    /// An operation defined only for odd degree sums received an even one.
    #[error("degree sum {0} must be odd")]
    EvenParity(i32),
    /// A degree exceeds the basis cutoff N-1.
    #[error("degree {l} exceeds cutoff N-1 = {cutoff}")]
    DegreeCutoff { l: i32, cutoff: i32 },
    /// The torus constant is undefined for a zero wave vector.
    #[error("zero wave vector")]
    ZeroWaveVector,
    /// A lattice vector component lies outside the sampled box.
    #[error("lattice component {0} outside [-(N-1)/2, (N-1)/2] for N={1}")]
    LatticeRange(i32, u32),
    /// Underlying i/o failure while reading or writing a table file.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    /// A table file is malformed or fails its checksum.
    #[error("bad table file: {0}")]
    Format(String),
}

/// Scale s_N multiplying the su(N) commutator in the quantized bracket.
///
/// The two power-law choices differ at relative order 1/N; the third makes
/// the degree-1 sector of the quantized bracket match the continuous one
/// exactly and is useful in consistency tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BracketScale {
    /// s_N = N^(3/2), the default.
    #[default]
    #[serde(rename = "n32")]
    N32,
    /// s_N = (N+1)^(3/2).
    #[serde(rename = "np32")]
    NPlusOne32,
    /// s_N = sqrt(N(N^2-1)), exact on the degree-1 sector.
    #[serde(rename = "rot")]
    RotationExact,
}

impl BracketScale {
    /// Numerical value of s_N.
    pub fn factor(self, n: u32) -> f64 {
        let nf = f64::from(n);
        match self {
            BracketScale::N32 => nf.powf(1.5),
            BracketScale::NPlusOne32 => (nf + 1.0).powf(1.5),
            BracketScale::RotationExact => (nf * (nf * nf - 1.0)).sqrt(),
        }
    }
}

impl FromStr for BracketScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n32" => Ok(BracketScale::N32),
            "np32" => Ok(BracketScale::NPlusOne32),
            "rot" => Ok(BracketScale::RotationExact),
            other => Err(format!("unknown bracket scale '{other}' (expected n32, np32, rot)")),
        }
    }
}

/// Index sextuple (l, m; l', m'; lbar, mbar) of one structure constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleIndex {
    pub l: i32,
    pub m: i32,
    pub lp: i32,
    pub mp: i32,
    pub lbar: i32,
    pub mbar: i32,
}

impl TripleIndex {
    /// Validates the range constraints 1 <= l and |m| <= l on each pair.
    pub fn new(l: i32, m: i32, lp: i32, mp: i32, lbar: i32, mbar: i32) -> Result<Self, StructError> {
        for (dl, dm) in [(l, m), (lp, mp), (lbar, mbar)] {
            if dl < 1 || dm.abs() > dl {
                return Err(StructError::IndexRange { l: dl, m: dm });
            }
        }
        Ok(Self { l, m, lp, mp, lbar, mbar })
    }

    /// Degree sum L = l + l' + lbar.
    pub fn degree_sum(&self) -> i32 {
        self.l + self.lp + self.lbar
    }

    /// Triangle inequality on the degrees together with m + m' = mbar.
    pub fn is_admissible(&self) -> bool {
        tri_ok(2 * self.l, 2 * self.lp, 2 * self.lbar) && self.m + self.mp == self.mbar
    }

    /// The index with the first two pairs exchanged; constants are odd under this.
    pub fn swapped(&self) -> Self {
        Self { l: self.lp, m: self.mp, lp: self.l, mp: self.m, lbar: self.lbar, mbar: self.mbar }
    }

    fn key(&self) -> [i32; 6] {
        [self.l, self.m, self.lp, self.mp, self.lbar, self.mbar]
    }

    fn from_key(k: [i32; 6]) -> Self {
        Self { l: k[0], m: k[1], lp: k[2], mp: k[3], lbar: k[4], mbar: k[5] }
    }
}

/// Triangle coefficient sqrt[(l+l'-lb)!(l-l'+lb)!(-l+l'+lb)!/(l+l'+lb+1)!].
pub fn triangle_delta(l: i32, lp: i32, lbar: i32) -> Result<f64, StructError> {
    if !tri_ok(2 * l, 2 * lp, 2 * lbar) {
        return Err(StructError::Triangle(l, lp, lbar));
    }
    let log = 0.5
        * (lf(l + lp - lbar) + lf(l - lp + lbar) + lf(-l + lp + lbar) - lf(l + lp + lbar + 1));
    Ok(log.exp())
}

/// Degree-only factor P of the continuous constant; zero for even L or a
/// broken triangle, where the constant itself vanishes.
pub fn continuous_p(l: i32, lp: i32, lbar: i32) -> f64 {
    let big_l = l + lp + lbar;
    if big_l % 2 == 0 || !tri_ok(2 * l, 2 * lp, 2 * lbar) {
        return 0.0;
    }
    let (l1, l2, l3) = (big_l - 2 * l, big_l - 2 * lp, big_l - 2 * lbar);
    let log = 0.5 * (lf(l1) + lf(l2) + lf(l3) - lf(big_l + 1))
        + f64::from(big_l + 1).ln()
        + lf((big_l - 1) / 2)
        - lf((l1 - 1) / 2)
        - lf((l2 - 1) / 2)
        - lf((l3 - 1) / 2);
    let sign = if ((big_l + 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    sign * log.exp()
}

/// P as an exact sign * sqrt(rational); zero outside the odd-L triangle domain.
fn continuous_p_exact(l: i32, lp: i32, lbar: i32) -> SignedSqrt {
    let big_l = l + lp + lbar;
    if big_l % 2 == 0 || !tri_ok(2 * l, 2 * lp, 2 * lbar) {
        return SignedSqrt::zero();
    }
    let (l1, l2, l3) = (big_l - 2 * l, big_l - 2 * lp, big_l - 2 * lbar);
    let ratio = BigRational::new(
        fact((big_l - 1) / 2) * (big_l + 1),
        fact((l1 - 1) / 2) * fact((l2 - 1) / 2) * fact((l3 - 1) / 2),
    );
    let sign = if ((big_l + 1) / 2) % 2 == 0 { 1i8 } else { -1 };
    SignedSqrt::from_parts(sign, triangle_delta_sq(2 * l, 2 * lp, 2 * lbar) * &ratio * &ratio)
}

/// Product (2l+1)(2l'+1)(2lbar+1) under the square root, as an exact value.
fn odd_dim_product(l: i32, lp: i32, lbar: i32) -> SignedSqrt {
    SignedSqrt::from_parts(
        1,
        BigRational::from_integer(
            (num_bigint::BigInt::from(2 * l + 1)) * (2 * lp + 1) * (2 * lbar + 1),
        ),
    )
}

/// Continuous structure constant of the spherical-harmonic Poisson bracket.
pub fn continuous_c(idx: &TripleIndex) -> f64 {
    if !idx.is_admissible() || idx.degree_sum() % 2 == 0 {
        return 0.0;
    }
    let dims = f64::from((2 * idx.l + 1) * (2 * idx.lp + 1) * (2 * idx.lbar + 1));
    let tj = three_j_raw(
        2 * idx.l,
        2 * idx.lp,
        2 * idx.lbar,
        2 * idx.m,
        2 * idx.mp,
        -2 * idx.mbar,
    );
    let sign = if idx.mbar.rem_euclid(2) == 0 { -1.0 } else { 1.0 };
    2.0 * sign * dims.sqrt() * tj * continuous_p(idx.l, idx.lp, idx.lbar)
}

/// The 6j symbol {l l' lbar; s s s} at the equal bottom row s = (N-1)/2,
/// evaluated exactly through the expanded product form. Debug builds assert
/// agreement with the alternating-sum evaluation to 1e-9.
fn six_j_bottom_exact(n: u32, l: i32, lp: i32, lbar: i32) -> SignedSqrt {
    let v = six_j_equal_bottom_expanded(l, lp, lbar, n as i32);
    #[cfg(debug_assertions)]
    {
        let s = n as i32 - 1;
        let racah = crate::wigner::six_j_raw(2 * l, 2 * lp, 2 * lbar, s, s, s);
        let got = v.to_f64();
        debug_assert!(
            (got - racah).abs() <= 1e-9 * got.abs().max(1.0),
            "6j forms disagree at ({l},{lp},{lbar}), N={n}: {got} vs {racah}"
        );
    }
    v
}

/// Raw commutator coefficient G with [T_a, T_b] = i sum_c G T_c; the
/// quantized structure constant is s_N * G.
pub fn discrete_g(n: u32, idx: &TripleIndex) -> Result<f64, StructError> {
    let cutoff = n as i32 - 1;
    for dl in [idx.l, idx.lp, idx.lbar] {
        if dl > cutoff {
            return Err(StructError::DegreeCutoff { l: dl, cutoff });
        }
    }
    if !idx.is_admissible() || idx.degree_sum() % 2 == 0 {
        return Ok(0.0);
    }
    Ok(discrete_g_unchecked(n, idx))
}

/// G for a validated admissible odd-L index within the cutoff.
fn discrete_g_unchecked(n: u32, idx: &TripleIndex) -> f64 {
    let pre = odd_dim_product(idx.l, idx.lp, idx.lbar)
        .mul(&six_j_bottom_exact(n, idx.l, idx.lp, idx.lbar));
    entry_from_parts(&pre, n as i32, idx)
}

/// Finishes one exact table entry: attaches the m-dependent 3j factor, the
/// parity factor 2, and the sign (-1)^(N+mbar); converts to f64 once.
fn entry_from_parts(pre: &SignedSqrt, n_for_sign: i32, idx: &TripleIndex) -> f64 {
    let tj = three_j_exact(
        2 * idx.l,
        2 * idx.lp,
        2 * idx.lbar,
        2 * idx.m,
        2 * idx.mp,
        -2 * idx.mbar,
    );
    let sign = if (n_for_sign + idx.mbar).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    2.0 * sign * pre.mul(&tj).to_f64()
}

/// Quantized structure constant s_N * G under the given bracket scale.
pub fn discrete_c(n: u32, idx: &TripleIndex, scale: BracketScale) -> Result<f64, StructError> {
    Ok(scale.factor(n) * discrete_g(n, idx)?)
}

/// Degree-only difference K = P - (-1)^(N+1) s_N {l l' lbar; s s s}; the
/// per-projection difference of the constants is 2 (-1)^(mbar+1) sqrt(dims)
/// 3j * K, and K itself carries the quadratic-in-1/N decay.
pub fn delta_k(n: u32, l: i32, lp: i32, lbar: i32, scale: BracketScale) -> f64 {
    let big_l = l + lp + lbar;
    let cutoff = n as i32 - 1;
    if big_l % 2 == 0
        || !tri_ok(2 * l, 2 * lp, 2 * lbar)
        || l > cutoff
        || lp > cutoff
        || lbar > cutoff
    {
        return 0.0;
    }
    let sgn = if n % 2 == 1 { 1.0 } else { -1.0 };
    continuous_p(l, lp, lbar) - sgn * scale.factor(n) * six_j_bottom_exact(n, l, lp, lbar).to_f64()
}

/// Fourth-root envelope (L L1 L2 L3)^(1/4) approximating P at large degrees.
pub fn stirling_p_estimate(l: i32, lp: i32, lbar: i32) -> Result<f64, StructError> {
    if !tri_ok(2 * l, 2 * lp, 2 * lbar) {
        return Err(StructError::Triangle(l, lp, lbar));
    }
    let big_l = l + lp + lbar;
    if big_l % 2 == 0 {
        return Err(StructError::EvenParity(big_l));
    }
    let (l1, l2, l3) = (big_l - 2 * l, big_l - 2 * lp, big_l - 2 * lbar);
    Ok(f64::from(big_l * l1 * l2 * l3).powf(0.25))
}

/// Two-component integer wave vector on the torus lattice.
pub type LatticeVector = [i32; 2];

/// Cross product n x k = n2 k1 - k2 n1 entering the torus constants.
pub fn lattice_cross(n: LatticeVector, k: LatticeVector) -> i64 {
    i64::from(n[1]) * i64::from(k[0]) - i64::from(k[1]) * i64::from(n[0])
}

/// Torus commutator-minus-Poisson coefficient
/// (N/2pi) sin((2pi/N)(n x k)) - (n x k), before division by |k|^2.
pub fn torus_c(n: u32, nv: LatticeVector, kv: LatticeVector) -> Result<f64, StructError> {
    if kv == [0, 0] {
        return Err(StructError::ZeroWaveVector);
    }
    let half = (n as i32 - 1) / 2;
    for &comp in nv.iter().chain(kv.iter()) {
        if comp.abs() > half {
            return Err(StructError::LatticeRange(comp, n));
        }
    }
    let x = lattice_cross(nv, kv) as f64;
    let nf = f64::from(n);
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(nf / two_pi * (two_pi / nf * x).sin() - x)
}

/// Enumerates all ordered triples (l, l', lbar) with degrees in [1, lmax],
/// triangle closure, and odd degree sum.
pub fn admissible_triples(lmax: i32) -> Vec<(i32, i32, i32)> {
    let mut out = Vec::new();
    for l in 1..=lmax {
        for lp in 1..=lmax {
            let lo = 1.max((l - lp).abs());
            let hi = lmax.min(l + lp);
            for lbar in lo..=hi {
                if (l + lp + lbar) % 2 == 1 {
                    out.push((l, lp, lbar));
                }
            }
        }
    }
    out
}

/// Maxima of the difference ratios r1 and r2 over a full sweep at level N.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiffBoundReport {
    /// Matrix size swept.
    pub n: u32,
    /// max |C_N - C| / min(l l', l lbar, l' lbar).
    pub r1_max: f64,
    /// max N^2 |C_N - C| / (max(l,l',lbar)^2 min(l l', l lbar, l' lbar)).
    pub r2_max: f64,
    /// Number of degree triples swept.
    pub triples: usize,
    /// Number of projection entries swept.
    pub entries: usize,
}

/// Sweeps every admissible index with degrees <= N-1 and records the maxima
/// of the two normalized difference ratios; both stay bounded in N.
pub fn diff_bound_check(n: u32, scale: BracketScale) -> DiffBoundReport {
    assert!(n % 2 == 1, "difference sweep is defined for odd N");
    let lmax = n as i32 - 1;
    let triples = admissible_triples(lmax);
    let per_triple = par::map_range(triples.len(), |i| {
        let (l, lp, lbar) = triples[i];
        let dk = delta_k(n, l, lp, lbar, scale);
        let dims = f64::from((2 * l + 1) * (2 * lp + 1) * (2 * lbar + 1)).sqrt();
        let minprod = f64::from((l * lp).min(l * lbar).min(lp * lbar));
        let maxsq = f64::from(l.max(lp).max(lbar).pow(2));
        let mut best = 0.0f64;
        let mut count = 0usize;
        for m in -l..=l {
            for mp in -lp..=lp {
                let mbar = m + mp;
                if mbar.abs() > lbar {
                    continue;
                }
                count += 1;
                let tj = three_j_raw(2 * l, 2 * lp, 2 * lbar, 2 * m, 2 * mp, -2 * mbar);
                best = best.max((2.0 * dims * tj * dk).abs());
            }
        }
        (best / minprod, f64::from(n * n) * best / (maxsq * minprod), count)
    });
    let mut report =
        DiffBoundReport { n, r1_max: 0.0, r2_max: 0.0, triples: triples.len(), entries: 0 };
    for (r1, r2, count) in per_triple {
        report.r1_max = report.r1_max.max(r1);
        report.r2_max = report.r2_max.max(r2);
        report.entries += count;
    }
    report
}

/// Whether a table holds continuous constants or level-N commutator data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableLevel {
    /// Continuous Poisson constants up to a degree cutoff.
    Continuous,
    /// Quantized constants of su(N).
    Discrete { n: u32 },
}

const ZSTC_MAGIC: &[u8; 4] = b"ZSTC";
const ZSTC_VERSION: u32 = 1;

/// Table of structure constants over canonically ordered admissible indices.
///
/// Only entries with (l, m) < (l', m') lexicographically are stored; the
/// swapped half follows from antisymmetry and the diagonal vanishes. Discrete
/// tables store raw G values and apply the bracket scale at lookup.
pub struct StructureTable {
    level: TableLevel,
    scale: BracketScale,
    lmax: i32,
    entries: Vec<([i32; 6], f64)>,
}

impl StructureTable {
    /// Builds the level-N table over all degrees <= N-1 with exact arithmetic,
    /// sharded over lbar.
    pub fn build_discrete(n: u32, scale: BracketScale) -> Self {
        let lmax = n as i32 - 1;
        let entries = build_entries(lmax, |l, lp, lbar| {
            let pre = odd_dim_product(l, lp, lbar).mul(&six_j_bottom_exact(n, l, lp, lbar));
            Box::new(move |idx: &TripleIndex| entry_from_parts(&pre, n as i32, idx))
        });
        Self { level: TableLevel::Discrete { n }, scale, lmax, entries }
    }

    /// Builds the continuous table over all degrees <= lmax with exact
    /// arithmetic, sharded over lbar.
    pub fn build_continuous(lmax: i32) -> Self {
        let entries = build_entries(lmax, |l, lp, lbar| {
            let pre = odd_dim_product(l, lp, lbar).mul(&continuous_p_exact(l, lp, lbar));
            // Continuous sign (-1)^(mbar+1) equals the discrete one at odd N.
            Box::new(move |idx: &TripleIndex| entry_from_parts(&pre, 1, idx))
        });
        Self { level: TableLevel::Continuous, scale: BracketScale::default(), lmax, entries }
    }

    /// Whether this is a continuous or level-N table.
    pub fn level(&self) -> TableLevel {
        self.level
    }

    /// The bracket scale applied to discrete lookups.
    pub fn scale(&self) -> BracketScale {
        self.scale
    }

    /// Replaces the bracket scale applied to discrete lookups.
    pub fn set_scale(&mut self, scale: BracketScale) {
        self.scale = scale;
    }

    /// Largest degree stored.
    pub fn lmax(&self) -> i32 {
        self.lmax
    }

    /// Number of stored canonical entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when no entries are stored.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Raw stored value at an arbitrary index, with the antisymmetry sign
    /// applied; zero for inadmissible, even-L, diagonal, or absent indices.
    pub fn raw(&self, idx: &TripleIndex) -> f64 {
        if !idx.is_admissible() || idx.degree_sum() % 2 == 0 {
            return 0.0;
        }
        let (canonical, sign) = match (idx.l, idx.m).cmp(&(idx.lp, idx.mp)) {
            std::cmp::Ordering::Equal => return 0.0,
            std::cmp::Ordering::Less => (*idx, 1.0),
            std::cmp::Ordering::Greater => (idx.swapped(), -1.0),
        };
        match self.entries.binary_search_by(|probe| probe.0.cmp(&canonical.key())) {
            Ok(pos) => sign * self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    /// Structure constant at an index: raw value times s_N for discrete
    /// tables, the raw value itself for continuous ones.
    pub fn get(&self, idx: &TripleIndex) -> f64 {
        match self.level {
            TableLevel::Continuous => self.raw(idx),
            TableLevel::Discrete { n } => self.scale.factor(n) * self.raw(idx),
        }
    }

    /// Iterates stored canonical entries as (index, raw value).
    pub fn iter_raw(&self) -> impl Iterator<Item = (TripleIndex, f64)> + '_ {
        self.entries.iter().map(|&(k, v)| (TripleIndex::from_key(k), v))
    }

    /// Writes the table in the binary cache format (magic "ZSTC", version,
    /// N, count, fixed-width records, CRC32 trailer). Continuous tables
    /// record N = 0.
    pub fn write_zstc(&self, path: &Path) -> Result<(), StructError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        let mut hasher = crc32fast::Hasher::new();
        let mut put = |w: &mut BufWriter<std::fs::File>, bytes: &[u8]| -> std::io::Result<()> {
            hasher.update(bytes);
            w.write_all(bytes)
        };
        put(&mut w, ZSTC_MAGIC)?;
        put(&mut w, &ZSTC_VERSION.to_le_bytes())?;
        let n = match self.level {
            TableLevel::Continuous => 0u32,
            TableLevel::Discrete { n } => n,
        };
        put(&mut w, &n.to_le_bytes())?;
        put(&mut w, &(self.entries.len() as u64).to_le_bytes())?;
        for (key, value) in &self.entries {
            for comp in key {
                put(&mut w, &comp.to_le_bytes())?;
            }
            put(&mut w, &value.to_le_bytes())?;
        }
        let crc = hasher.finalize();
        w.write_all(&crc.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_zstc`](Self::write_zstc), verifying
    /// magic, version, record count, and checksum.
    pub fn read_zstc(path: &Path, scale: BracketScale) -> Result<Self, StructError> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut hasher = crc32fast::Hasher::new();
        let mut take = |r: &mut BufReader<std::fs::File>, buf: &mut [u8]| -> std::io::Result<()> {
            r.read_exact(buf)?;
            hasher.update(buf);
            Ok(())
        };
        let mut magic = [0u8; 4];
        take(&mut r, &mut magic)?;
        if &magic != ZSTC_MAGIC {
            return Err(StructError::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        take(&mut r, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != ZSTC_VERSION {
            return Err(StructError::Format(format!("unsupported version {version}")));
        }
        take(&mut r, &mut word)?;
        let n = u32::from_le_bytes(word);
        let mut dword = [0u8; 8];
        take(&mut r, &mut dword)?;
        let count = u64::from_le_bytes(dword);
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut key = [0i32; 6];
            for comp in &mut key {
                take(&mut r, &mut word)?;
                *comp = i32::from_le_bytes(word);
            }
            take(&mut r, &mut dword)?;
            entries.push((key, f64::from_le_bytes(dword)));
        }
        let expected = hasher.finalize();
        r.read_exact(&mut word)?;
        if u32::from_le_bytes(word) != expected {
            return Err(StructError::Format("checksum mismatch".into()));
        }
        entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let lmax = entries
            .iter()
            .map(|(k, _)| k[0].max(k[2]).max(k[4]))
            .max()
            .unwrap_or(0);
        let level = if n == 0 { TableLevel::Continuous } else { TableLevel::Discrete { n } };
        Ok(Self { level, scale, lmax, entries })
    }

    /// CRC32 of the serialized header and records, as written to disk.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(ZSTC_MAGIC);
        hasher.update(&ZSTC_VERSION.to_le_bytes());
        let n = match self.level {
            TableLevel::Continuous => 0u32,
            TableLevel::Discrete { n } => n,
        };
        hasher.update(&n.to_le_bytes());
        hasher.update(&(self.entries.len() as u64).to_le_bytes());
        for (key, value) in &self.entries {
            for comp in key {
                hasher.update(&comp.to_le_bytes());
            }
            hasher.update(&value.to_le_bytes());
        }
        hasher.finalize()
    }
}

/// Enumerates canonical entries sharded over lbar; `make_entry` builds a
/// per-triple closure holding the degree-only exact prefactor.
fn build_entries<F>(lmax: i32, make_entry: F) -> Vec<([i32; 6], f64)>
where
    F: Fn(i32, i32, i32) -> Box<dyn Fn(&TripleIndex) -> f64> + Sync + Send,
{
    let shards = par::map_range(lmax as usize, |shard| {
        let lbar = shard as i32 + 1;
        let mut records = Vec::new();
        for l in 1..=lmax {
            for lp in l..=lmax {
                if (l + lp + lbar) % 2 == 0 || !tri_ok(2 * l, 2 * lp, 2 * lbar) {
                    continue;
                }
                let entry = make_entry(l, lp, lbar);
                for m in -l..=l {
                    let mp_lo = if l == lp { m + 1 } else { -lp };
                    for mp in mp_lo..=lp {
                        let mbar = m + mp;
                        if mbar.abs() > lbar {
                            continue;
                        }
                        let idx = TripleIndex { l, m, lp, mp, lbar, mbar };
                        records.push((idx.key(), entry(&idx)));
                    }
                }
            }
        }
        records
    });
    let mut entries: Vec<([i32; 6], f64)> = shards.into_iter().flatten().collect();
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn idx(l: i32, m: i32, lp: i32, mp: i32, lbar: i32, mbar: i32) -> TripleIndex {
        TripleIndex::new(l, m, lp, mp, lbar, mbar).unwrap()
    }

    #[test]
    fn triangle_delta_values() {
        assert_relative_eq!(triangle_delta(1, 1, 1).unwrap(), 1.0 / 24.0f64.sqrt(), max_relative = 1e-14);
        for l in 1..6 {
            // Degenerate triple (l, l, 0) collapses to 1/sqrt(2l+1).
            assert_relative_eq!(
                triangle_delta(l, l, 0).unwrap(),
                1.0 / f64::from(2 * l + 1).sqrt(),
                max_relative = 1e-14
            );
        }
        let exact = triangle_delta_sq(4, 2, 2);
        let exact_f = SignedSqrt::from_parts(1, exact).to_f64();
        assert_relative_eq!(triangle_delta(2, 1, 1).unwrap(), exact_f, max_relative = 1e-13);
        assert!(matches!(triangle_delta(1, 1, 5), Err(StructError::Triangle(..))));
    }

    #[test]
    fn continuous_p_matches_exact_and_is_symmetric() {
        for (l, lp, lbar) in [(1, 1, 1), (2, 3, 4), (5, 7, 9), (10, 11, 12), (20, 20, 31)] {
            let f = continuous_p(l, lp, lbar);
            let e = continuous_p_exact(l, lp, lbar).to_f64();
            assert_relative_eq!(f, e, max_relative = 1e-11);
            // P is symmetric in its three degrees.
            assert_relative_eq!(f, continuous_p(lbar, l, lp), max_relative = 1e-12);
            assert_relative_eq!(f, continuous_p(lp, l, lbar), max_relative = 1e-12);
        }
        assert_eq!(continuous_p(1, 1, 2), 0.0);
        assert_eq!(continuous_p(1, 1, 4), 0.0);
    }

    #[test]
    fn continuous_c_selection_and_antisymmetry() {
        assert_eq!(continuous_c(&idx(1, 1, 1, 0, 2, 1)), 0.0);
        assert_eq!(continuous_c(&idx(1, 1, 2, 0, 2, 0)), 0.0);
        let a = idx(1, 1, 2, 0, 2, 1);
        let c = continuous_c(&a);
        assert!(c != 0.0);
        assert_relative_eq!(continuous_c(&a.swapped()), -c, max_relative = 1e-14);
    }

    #[test]
    fn discrete_g_matches_table_and_cutoff_errors() {
        let n = 5;
        let table = StructureTable::build_discrete(n, BracketScale::default());
        for (index, raw) in table.iter_raw() {
            let direct = discrete_g(n, &index).unwrap();
            assert_abs_diff_eq!(direct, raw, epsilon = 1e-14 * raw.abs().max(1.0));
        }
        assert!(matches!(
            discrete_g(5, &idx(5, 0, 1, 1, 5, 1)),
            Err(StructError::DegreeCutoff { .. })
        ));
        assert_eq!(discrete_g(5, &idx(1, 1, 1, 0, 2, 1)).unwrap(), 0.0);
    }

    #[test]
    fn discrete_minus_continuous_shrinks_quadratically() {
        // Fixed low index: the difference drops about 4x per N doubling.
        let scale = BracketScale::default();
        let a = idx(1, 1, 1, 0, 1, 1);
        let e: Vec<f64> = [5u32, 9, 17, 33]
            .iter()
            .map(|&n| (discrete_c(n, &a, scale).unwrap() - continuous_c(&a)).abs())
            .collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]));
        let ratio = e[3] / e[2];
        assert!((0.15..=0.45).contains(&ratio), "17->33 ratio {ratio}");
    }

    #[test]
    fn stirling_estimate_values_and_band() {
        assert_relative_eq!(stirling_p_estimate(1, 1, 1).unwrap(), 3.0f64.powf(0.25));
        assert!(matches!(stirling_p_estimate(2, 1, 1), Err(StructError::EvenParity(4))));
        assert!(matches!(stirling_p_estimate(1, 1, 7), Err(StructError::Triangle(..))));
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for l in 10..=40 {
            for lp in l..=40 {
                for lbar in (lp..=40.min(l + lp)).filter(|lb| (l + lp + lb) % 2 == 1) {
                    let ratio = continuous_p(l, lp, lbar).abs()
                        / stirling_p_estimate(l, lp, lbar).unwrap();
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                }
            }
        }
        assert!(lo >= 0.25 && hi <= 4.0, "P/stirling band [{lo}, {hi}]");
    }

    #[test]
    fn torus_c_values_and_cubic_envelope() {
        assert_eq!(torus_c(5, [1, 0], [2, 0]).unwrap(), 0.0);
        let want = 1.0 - 5.0 / (2.0 * std::f64::consts::PI) * (2.0 * std::f64::consts::PI / 5.0).sin();
        assert_relative_eq!(torus_c(5, [1, 0], [0, 1]).unwrap(), want, max_relative = 1e-14);
        assert!(matches!(torus_c(5, [1, 0], [0, 0]), Err(StructError::ZeroWaveVector)));
        assert!(matches!(torus_c(5, [3, 0], [0, 1]), Err(StructError::LatticeRange(..))));
        // |C| <= (2pi)^2 |n x k|^3 / (6 N^2), sharp as n x k -> 0.
        let n = 33u32;
        let half = (n as i32 - 1) / 2;
        let env = (2.0 * std::f64::consts::PI).powi(2) / (6.0 * f64::from(n * n));
        let mut max_ratio = 0.0f64;
        for n1 in -half..=half {
            for n2 in -half..=half {
                for k1 in -half..=half {
                    for k2 in [-half, -1, 1, half] {
                        let x = lattice_cross([n1, n2], [k1, k2]);
                        if x == 0 {
                            continue;
                        }
                        let c = torus_c(n, [n1, n2], [k1, k2]).unwrap();
                        max_ratio = max_ratio.max(c.abs() / (env * (x.abs() as f64).powi(3)));
                    }
                }
            }
        }
        assert!(max_ratio <= 1.0 + 1e-12, "cubic envelope ratio {max_ratio}");
        assert!(max_ratio >= 0.9, "envelope should be near-sharp, got {max_ratio}");
    }

    #[test]
    fn diff_bound_report_frozen_maxima() {
        let r5 = diff_bound_check(5, BracketScale::default());
        assert_relative_eq!(r5.r1_max, 2.4892, max_relative = 1e-3);
        assert_relative_eq!(r5.r2_max, 3.8893, max_relative = 1e-3);
        let r9 = diff_bound_check(9, BracketScale::default());
        assert_relative_eq!(r9.r1_max, 2.9506, max_relative = 1e-3);
        assert_relative_eq!(r9.r2_max, 4.5813, max_relative = 1e-3);
    }

    #[test]
    fn table_lookup_antisymmetry_and_scale() {
        let n = 5;
        let mut table = StructureTable::build_discrete(n, BracketScale::default());
        let a = idx(1, 1, 2, 0, 2, 1);
        let raw = table.raw(&a);
        assert!(raw != 0.0);
        assert_eq!(table.raw(&a.swapped()), -raw);
        assert_eq!(table.raw(&idx(1, 1, 1, 1, 2, 2)), 0.0);
        assert_relative_eq!(table.get(&a), BracketScale::default().factor(n) * raw);
        table.set_scale(BracketScale::RotationExact);
        assert_relative_eq!(table.get(&a), BracketScale::RotationExact.factor(n) * raw);
        // Degree-1 sector under the rotation-exact scale matches continuity.
        assert_relative_eq!(
            BracketScale::RotationExact.factor(n) * table.raw(&idx(1, 1, 1, 0, 1, 1)),
            continuous_c(&idx(1, 1, 1, 0, 1, 1)),
            max_relative = 1e-12
        );
    }

    #[test]
    fn continuous_table_matches_scalar_path() {
        let table = StructureTable::build_continuous(4);
        assert_eq!(table.level(), TableLevel::Continuous);
        for (index, raw) in table.iter_raw() {
            assert_abs_diff_eq!(
                continuous_c(&index),
                raw,
                epsilon = 1e-11 * raw.abs().max(1.0)
            );
            assert_eq!(table.get(&index), raw);
        }
    }

    #[test]
    fn zstc_roundtrip_and_corruption_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t5.zstc");
        let table = StructureTable::build_discrete(5, BracketScale::default());
        table.write_zstc(&path).unwrap();
        let back = StructureTable::read_zstc(&path, BracketScale::default()).unwrap();
        assert_eq!(back.level(), TableLevel::Discrete { n: 5 });
        assert_eq!(back.len(), table.len());
        assert_eq!(back.checksum(), table.checksum());
        for (index, raw) in table.iter_raw() {
            assert_eq!(back.raw(&index), raw);
        }
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            StructureTable::read_zstc(&path, BracketScale::default()),
            Err(StructError::Format(_))
        ));
    }

    #[test]
    fn bracket_scale_factors_and_parsing() {
        assert_relative_eq!(BracketScale::N32.factor(9), 27.0, max_relative = 1e-14);
        assert_relative_eq!(BracketScale::NPlusOne32.factor(3), 8.0, max_relative = 1e-14);
        assert_relative_eq!(BracketScale::RotationExact.factor(3), 24.0f64.sqrt(), max_relative = 1e-14);
        assert_eq!("n32".parse::<BracketScale>().unwrap(), BracketScale::N32);
        assert_eq!("np32".parse::<BracketScale>().unwrap(), BracketScale::NPlusOne32);
        assert_eq!("rot".parse::<BracketScale>().unwrap(), BracketScale::RotationExact);
        assert!("x".parse::<BracketScale>().is_err());
    }

    #[test]
    fn triple_index_validation() {
        assert!(TripleIndex::new(0, 0, 1, 0, 1, 0).is_err());
        assert!(TripleIndex::new(1, 2, 1, 0, 1, 0).is_err());
        let a = idx(2, 1, 3, -1, 4, 0);
        assert!(a.is_admissible());
        assert_eq!(a.degree_sum(), 9);
        assert!(!idx(2, 1, 3, -1, 4, 1).is_admissible());
        assert!(!idx(1, 0, 1, 1, 3, 1).is_admissible());
    }

    #[test]
    fn admissible_triples_counts() {
        // Counts pinned from an independent sweep of the same constraints.
        assert_eq!(admissible_triples(4).len(), 23);
        let t8 = admissible_triples(8);
        assert_eq!(t8.len(), 154);
        assert!(t8.iter().all(|&(l, lp, lbar)| (l + lp + lbar) % 2 == 1));
        assert!(t8.iter().all(|&(l, lp, lbar)| tri_ok(2 * l, 2 * lp, 2 * lbar)));
    }
}
