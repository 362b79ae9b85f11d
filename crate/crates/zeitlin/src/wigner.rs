//! Wigner 3j and 6j symbols: numerically stable log-space evaluation with a
//! separate sign ledger, an exact rational oracle in [`exact`], and the
//! asymptotic envelope bounds used when sweeping structure constants.

pub mod exact;

use once_cell::sync::Lazy;
use std::fmt;
use thiserror::Error;

/// Angular momentum stored as twice its value so half-integers stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt {
    twice: i32,
}

impl HalfInt {
    /// Builds from twice the value, e.g. `from_twice(3)` is 3/2.
    pub const fn from_twice(twice: i32) -> Self {
        Self { twice }
    }

    /// Builds from an integer value, e.g. `from_int(2)` is 2.
    pub const fn from_int(value: i32) -> Self {
        Self { twice: 2 * value }
    }

    /// Twice the stored value.
    pub const fn twice(self) -> i32 {
        self.twice
    }

    /// The value as a float.
    pub fn as_f64(self) -> f64 {
        f64::from(self.twice) / 2.0
    }

    /// True when the value is a whole integer.
    pub const fn is_integer(self) -> bool {
        self.twice % 2 == 0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}/2", self.twice)
        }
    }
}

/// Domain violations for symbol evaluation; selection-rule zeros are values, not errors.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WignerError {
    #[error("negative angular momentum {0}")]
    NegativeJ(HalfInt),
    #[error("projection {m} exceeds angular momentum {j}")]
    ProjectionRange { j: HalfInt, m: HalfInt },
    #[error("projection {m} and angular momentum {j} differ by a half-integer")]
    ParityMismatch { j: HalfInt, m: HalfInt },
}

/// Precomputed log(n!) values, optionally alongside exact integer factorials.
pub struct LogFactorialTable {
    max_n: usize,
    values: Vec<f64>,
    exact_mode: bool,
    exact: Vec<num_bigint::BigUint>,
}

impl LogFactorialTable {
    /// Builds log(n!) for n = 0..=max_n; `exact_mode` also stores exact n!.
    pub fn new(max_n: usize, exact_mode: bool) -> Self {
        let mut values = Vec::with_capacity(max_n + 1);
        values.push(0.0);
        for n in 1..=max_n {
            values.push(values[n - 1] + (n as f64).ln());
        }
        let mut exact = Vec::new();
        if exact_mode {
            let mut acc = num_bigint::BigUint::from(1u32);
            exact.push(acc.clone());
            for n in 1..=max_n {
                acc *= n as u32;
                exact.push(acc.clone());
            }
        }
        Self { max_n, values, exact_mode, exact }
    }

    /// Largest n with a stored entry.
    pub fn max_n(&self) -> usize {
        self.max_n
    }

    /// log(n!).
    pub fn log_factorial(&self, n: usize) -> f64 {
        self.values[n]
    }

    /// Exact n!; only available in exact mode.
    pub fn exact_factorial(&self, n: usize) -> &num_bigint::BigUint {
        assert!(self.exact_mode, "table built without exact factorials");
        &self.exact[n]
    }
}

/// Shared float table; sized for every momentum the crate evaluates (sums reach ~3j+1).
static LF: Lazy<LogFactorialTable> = Lazy::new(|| LogFactorialTable::new(4096, false));

/// log(n!) for doubled-convention half-counts; callers guarantee n ≥ 0.
pub(crate) fn lf(n: i32) -> f64 {
    LF.values[n as usize]
}

/// Triangle inequality plus integer-sum condition, in doubled units.
pub(crate) fn tri_ok(ta: i32, tb: i32, tc: i32) -> bool {
    (ta - tb).abs() <= tc && tc <= ta + tb && (ta + tb + tc) % 2 == 0
}

/// log of the triangle coefficient sqrt[(a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)!].
fn log_tri(ta: i32, tb: i32, tc: i32) -> f64 {
    0.5 * (lf((ta + tb - tc) / 2) + lf((ta - tb + tc) / 2) + lf((-ta + tb + tc) / 2)
        - lf((ta + tb + tc) / 2 + 1))
}

fn validate_jm(j: HalfInt, m: HalfInt) -> Result<(), WignerError> {
    if j.twice < 0 {
        return Err(WignerError::NegativeJ(j));
    }
    if m.twice.abs() > j.twice {
        return Err(WignerError::ProjectionRange { j, m });
    }
    if (j.twice + m.twice) % 2 != 0 {
        return Err(WignerError::ParityMismatch { j, m });
    }
    Ok(())
}

/// Alternating sum of log-magnitude terms: factor out the largest term to
/// keep the exponentials in range, accumulate with the sign ledger.
fn signed_exp_sum(terms: &[(f64, f64)]) -> f64 {
    let mx = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return 0.0;
    }
    let s: f64 = terms.iter().map(|&(lg, sg)| sg * (lg - mx).exp()).sum();
    s * mx.exp()
}

/// Wigner 3j symbol via the Racah single-sum formula evaluated in log space.
///
/// Returns exactly 0 on selection-rule failures (m-sum, triangle, parity);
/// domain violations (negative j, |m| > j, parity mismatch) are errors.
pub fn three_j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    m1: HalfInt,
    m2: HalfInt,
    m3: HalfInt,
) -> Result<f64, WignerError> {
    validate_jm(j1, m1)?;
    validate_jm(j2, m2)?;
    validate_jm(j3, m3)?;
    Ok(three_j_raw(j1.twice, j2.twice, j3.twice, m1.twice, m2.twice, m3.twice))
}

/// 3j in doubled units after validation; shared by tables and sweeps.
pub(crate) fn three_j_raw(tj1: i32, tj2: i32, tj3: i32, tm1: i32, tm2: i32, tm3: i32) -> f64 {
    if tm1 + tm2 + tm3 != 0 || !tri_ok(tj1, tj2, tj3) {
        return 0.0;
    }
    if tm1.abs() > tj1 || tm2.abs() > tj2 || tm3.abs() > tj3 {
        return 0.0;
    }
    if (tj1 + tm1) % 2 != 0 || (tj2 + tm2) % 2 != 0 || (tj3 + tm3) % 2 != 0 {
        return 0.0;
    }
    let t1 = (tj2 - tj3 - tm1) / 2;
    let t2 = (tj1 - tj3 + tm2) / 2;
    let t3 = (tj1 + tj2 - tj3) / 2;
    let t4 = (tj1 - tm1) / 2;
    let t5 = (tj2 + tm2) / 2;
    let kmin = 0.max(t1).max(t2);
    let kmax = t3.min(t4).min(t5);
    if kmax < kmin {
        return 0.0;
    }
    let logpre = log_tri(tj1, tj2, tj3)
        + 0.5 * (lf((tj1 + tm1) / 2)
            + lf((tj1 - tm1) / 2)
            + lf((tj2 + tm2) / 2)
            + lf((tj2 - tm2) / 2)
            + lf((tj3 + tm3) / 2)
            + lf((tj3 - tm3) / 2));
    let terms: Vec<(f64, f64)> = (kmin..=kmax)
        .map(|k| {
            let logden =
                lf(k) + lf(k - t1) + lf(k - t2) + lf(t3 - k) + lf(t4 - k) + lf(t5 - k);
            (logpre - logden, if k % 2 == 0 { 1.0 } else { -1.0 })
        })
        .collect();
    let phase = if ((tj1 - tj2 - tm3) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    phase * signed_exp_sum(&terms)
}

/// Wigner 6j symbol via the Racah single-sum formula evaluated in log space.
///
/// Returns exactly 0 when any of the four triads violates the triangle or
/// integer-sum conditions; negative entries are errors.
pub fn six_j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    j4: HalfInt,
    j5: HalfInt,
    j6: HalfInt,
) -> Result<f64, WignerError> {
    for j in [j1, j2, j3, j4, j5, j6] {
        if j.twice() < 0 {
            return Err(WignerError::NegativeJ(j));
        }
    }
    Ok(six_j_raw(j1.twice, j2.twice, j3.twice, j4.twice, j5.twice, j6.twice))
}

/// 6j in doubled units after validation; shared by tables and sweeps.
pub(crate) fn six_j_raw(tj1: i32, tj2: i32, tj3: i32, tj4: i32, tj5: i32, tj6: i32) -> f64 {
    let triads = [
        (tj1, tj2, tj3),
        (tj1, tj5, tj6),
        (tj4, tj2, tj6),
        (tj4, tj5, tj3),
    ];
    if triads.iter().any(|&(a, b, c)| !tri_ok(a, b, c)) {
        return 0.0;
    }
    let logd: f64 = triads.iter().map(|&(a, b, c)| log_tri(a, b, c)).sum();
    let f1 = (tj1 + tj2 + tj3) / 2;
    let f2 = (tj1 + tj5 + tj6) / 2;
    let f3 = (tj4 + tj2 + tj6) / 2;
    let f4 = (tj4 + tj5 + tj3) / 2;
    let g1 = (tj1 + tj2 + tj4 + tj5) / 2;
    let g2 = (tj2 + tj3 + tj5 + tj6) / 2;
    let g3 = (tj1 + tj3 + tj4 + tj6) / 2;
    let kmin = f1.max(f2).max(f3).max(f4);
    let kmax = g1.min(g2).min(g3);
    if kmax < kmin {
        return 0.0;
    }
    let terms: Vec<(f64, f64)> = (kmin..=kmax)
        .map(|k| {
            let logden = lf(k - f1)
                + lf(k - f2)
                + lf(k - f3)
                + lf(k - f4)
                + lf(g1 - k)
                + lf(g2 - k)
                + lf(g3 - k);
            (logd + lf(k + 1) - logden, if k % 2 == 0 { 1.0 } else { -1.0 })
        })
        .collect();
    signed_exp_sum(&terms)
}

/// Envelope 1/sqrt((2l'+1)(N+1)) for 6j symbols with one momentum small
/// against a large equal bottom row (constant fixed to 1; envelope only).
pub fn edmonds_bound(_l: i32, lp: i32, _lbar: i32, n: i32) -> f64 {
    1.0 / (f64::from(2 * lp + 1) * f64::from(n + 1)).sqrt()
}

/// Envelope 1/sqrt(N^3(2l+1)(2l'+1)(2lbar+1)) for 6j symbols with all
/// momenta large (constant fixed to 1; envelope only, see tests for the
/// fitted-constant sweeps).
pub fn ponzano_regge_bound(l: i32, lp: i32, lbar: i32, n: i32) -> f64 {
    let nn = f64::from(n);
    1.0 / (nn * nn * nn * f64::from(2 * l + 1) * f64::from(2 * lp + 1) * f64::from(2 * lbar + 1))
        .sqrt()
}

/// All momenta at least sqrt(N): the regime where the all-large envelope applies.
pub fn ponzano_regge_regime(l: i32, lp: i32, lbar: i32, n: i32) -> bool {
    let thresh = f64::from(n).sqrt();
    f64::from(l) >= thresh && f64::from(lp) >= thresh && f64::from(lbar) >= thresh
}

/// Sum_m (-1)^m 3j(l l lbar; m -m 0); vanishes for lbar >= 1 and has modulus
/// sqrt(2l+1) at lbar = 0 (with sign (-1)^l).
pub fn collapse_sum(l: i32, lbar: i32) -> f64 {
    let mut acc = 0.0;
    for m in -l..=l {
        let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        acc += sign * three_j_raw(2 * l, 2 * l, 2 * lbar, 2 * m, -2 * m, 0);
    }
    acc
}
