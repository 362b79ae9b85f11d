//! Exact rational evaluation of 3j/6j symbols and related factorial forms.
//!
//! Every value here is sign * sqrt(square) with `square` a nonnegative
//! rational, a representation closed under multiplication. Conversion to f64
//! goes through logarithms so the huge factorial ratios near the top of a
//! table build cannot overflow intermediate floats. Structure-constant table
//! builds use this path: commutator-closure residuals at the 1e-8 absolute
//! scale require table entries accurate to roundoff, which plain double
//! evaluation of the alternating Racah sum does not deliver at large momenta.

use super::{tri_ok, LogFactorialTable};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use once_cell::sync::Lazy;

/// Shared exact factorial table; momenta stay far below this cap.
static FACT: Lazy<LogFactorialTable> = Lazy::new(|| LogFactorialTable::new(512, true));

/// Exact n! as a signed big integer.
pub(crate) fn fact(n: i32) -> BigInt {
    BigInt::from(FACT.exact_factorial(n as usize).clone())
}

/// A number sign * sqrt(square); exact, and closed under multiplication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedSqrt {
    sign: i8,
    square: BigRational,
}

impl SignedSqrt {
    /// Exact zero.
    pub fn zero() -> Self {
        Self { sign: 0, square: BigRational::zero() }
    }

    /// Embeds a rational r as sign(r) * sqrt(r^2).
    pub fn from_rational(r: BigRational) -> Self {
        let sign = if r.is_zero() {
            0
        } else if r.is_positive() {
            1
        } else {
            -1
        };
        Self { sign, square: &r * &r }
    }

    /// sign * sqrt(square) from parts; normalizes a zero square to sign 0.
    pub fn from_parts(sign: i8, square: BigRational) -> Self {
        assert!(!square.is_negative(), "square must be nonnegative");
        if square.is_zero() {
            Self::zero()
        } else {
            Self { sign, square }
        }
    }

    /// True when the value is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    /// The sign in {-1, 0, 1}.
    pub fn sign(&self) -> i8 {
        self.sign
    }

    /// The exact square of the value.
    pub fn square(&self) -> &BigRational {
        &self.square
    }

    /// Product of two values; exact.
    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        Self { sign: self.sign * other.sign, square: &self.square * &other.square }
    }

    /// Nearest double, via logarithms so huge factorial ratios cannot overflow.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let ln = 0.5 * (ln_biguint(self.square.numer().magnitude())
            - ln_biguint(self.square.denom().magnitude()));
        f64::from(self.sign) * ln.exp()
    }
}

/// Natural log of a positive big integer from its top bits.
fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 53 {
        return x.to_f64().expect("small BigUint fits f64").ln();
    }
    let shift = bits - 53;
    let top = (x >> shift).to_f64().expect("53-bit mantissa fits f64");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Exact triangle coefficient squared: (a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)!.
pub fn triangle_delta_sq(ta: i32, tb: i32, tc: i32) -> BigRational {
    BigRational::new(
        fact((ta + tb - tc) / 2) * fact((ta - tb + tc) / 2) * fact((-ta + tb + tc) / 2),
        fact((ta + tb + tc) / 2 + 1),
    )
}

/// Exact 3j symbol in doubled units; selection-rule failures give exact zero.
pub fn three_j_exact(tj1: i32, tj2: i32, tj3: i32, tm1: i32, tm2: i32, tm3: i32) -> SignedSqrt {
    if tm1 + tm2 + tm3 != 0 || !tri_ok(tj1, tj2, tj3) {
        return SignedSqrt::zero();
    }
    if tm1.abs() > tj1 || tm2.abs() > tj2 || tm3.abs() > tj3 {
        return SignedSqrt::zero();
    }
    if (tj1 + tm1) % 2 != 0 || (tj2 + tm2) % 2 != 0 || (tj3 + tm3) % 2 != 0 {
        return SignedSqrt::zero();
    }
    let t1 = (tj2 - tj3 - tm1) / 2;
    let t2 = (tj1 - tj3 + tm2) / 2;
    let t3 = (tj1 + tj2 - tj3) / 2;
    let t4 = (tj1 - tm1) / 2;
    let t5 = (tj2 + tm2) / 2;
    let kmin = 0.max(t1).max(t2);
    let kmax = t3.min(t4).min(t5);
    if kmax < kmin {
        return SignedSqrt::zero();
    }
    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let den = fact(k) * fact(k - t1) * fact(k - t2) * fact(t3 - k) * fact(t4 - k) * fact(t5 - k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return SignedSqrt::zero();
    }
    let pre = triangle_delta_sq(tj1, tj2, tj3)
        * BigRational::from(
            fact((tj1 + tm1) / 2)
                * fact((tj1 - tm1) / 2)
                * fact((tj2 + tm2) / 2)
                * fact((tj2 - tm2) / 2)
                * fact((tj3 + tm3) / 2)
                * fact((tj3 - tm3) / 2),
        );
    let phase = if ((tj1 - tj2 - tm3) / 2) % 2 == 0 { 1 } else { -1 };
    let sign = phase * if sum.is_positive() { 1i8 } else { -1 };
    SignedSqrt::from_parts(sign, pre * &sum * &sum)
}

/// Exact 6j symbol in doubled units; triad failures give exact zero.
pub fn six_j_exact(tj1: i32, tj2: i32, tj3: i32, tj4: i32, tj5: i32, tj6: i32) -> SignedSqrt {
    let triads = [
        (tj1, tj2, tj3),
        (tj1, tj5, tj6),
        (tj4, tj2, tj6),
        (tj4, tj5, tj3),
    ];
    if triads.iter().any(|&(a, b, c)| !tri_ok(a, b, c)) {
        return SignedSqrt::zero();
    }
    let mut pre = BigRational::one();
    for &(a, b, c) in &triads {
        pre *= triangle_delta_sq(a, b, c);
    }
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
        return SignedSqrt::zero();
    }
    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let den = fact(k - f1)
            * fact(k - f2)
            * fact(k - f3)
            * fact(k - f4)
            * fact(g1 - k)
            * fact(g2 - k)
            * fact(g3 - k);
        let term = BigRational::new(fact(k + 1), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return SignedSqrt::zero();
    }
    let sign = if sum.is_positive() { 1i8 } else { -1 };
    SignedSqrt::from_parts(sign, pre * &sum * &sum)
}

/// Exact 6j symbol {a b c; s s s} with equal bottom row s = (d-1)/2, through
/// the expanded product form in the dimension d = 2s+1. Requires integer top
/// momenta with a,b,c <= d-1; outside that range the symbol is zero and the
/// product form is singular, so exact zero is returned directly.
pub fn six_j_equal_bottom_expanded(a: i32, b: i32, c: i32, d: i32) -> SignedSqrt {
    assert!(d >= 2, "dimension must be at least 2");
    if !tri_ok(2 * a, 2 * b, 2 * c) {
        return SignedSqrt::zero();
    }
    if a > d - 1 || b > d - 1 || c > d - 1 {
        return SignedSqrt::zero();
    }
    let big_l = a + b + c;
    let dd = BigRational::from(BigInt::from(d));
    // Square of the prefactor: delta^2 / (d * prod(1 - (p/d)^2)).
    let mut prod = BigRational::one();
    for top in [a, b, c] {
        for p in 1..=top {
            let r = BigRational::new(BigInt::from(p), BigInt::from(d));
            prod *= BigRational::one() - &r * &r;
        }
    }
    let pre_sq = triangle_delta_sq(2 * a, 2 * b, 2 * c) / (&dd * &prod);
    let mut sum = BigRational::zero();
    for k in a.max(b).max(c)..=(a + b).min(b + c).min(a + c) {
        let mut s_k = BigRational::one();
        for i in (k - big_l)..=k {
            s_k *= BigRational::one() + BigRational::new(BigInt::from(i), BigInt::from(d));
        }
        let den = fact(k - a)
            * fact(k - b)
            * fact(k - c)
            * fact(a + b - k)
            * fact(b + c - k)
            * fact(a + c - k);
        let term = s_k / BigRational::from(den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    sum *= BigRational::from(fact(a) * fact(b) * fact(c));
    if sum.is_zero() {
        return SignedSqrt::zero();
    }
    let pre_sign = if (d - 1) % 2 == 0 { 1i8 } else { -1 };
    let sign = pre_sign * if sum.is_positive() { 1i8 } else { -1 };
    SignedSqrt::from_parts(sign, pre_sq * &sum * &sum)
}
