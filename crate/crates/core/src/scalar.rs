//! Number types for generating-function evaluation.
//!
//! Everything in [`crate::gfalg`] and the enumeration backend of
//! [`crate::renewal`] is generic over [`Scalar`], so the same code runs in
//! double precision and in exact rational arithmetic (the latter backs the
//! small-n oracle tests).

use std::fmt::Debug;
use std::hash::Hash;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub trait Scalar: Clone + Debug + PartialOrd + Send + Sync + 'static {
    /// Memo-table key. Exact bit pattern for floats, the value itself for rationals.
    type Key: Hash + Eq + Clone + Send;
    /// Summation accumulator.
    type Acc: Accumulator<Self>;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn key(&self) -> Self::Key;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
}

pub trait Accumulator<T>: Default + Send {
    fn push(&mut self, x: &T);
    fn merge(&mut self, other: &Self);
    fn total(&self) -> T;
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Accumulator<f64> for Compensated {
    fn push(&mut self, x: &f64) {
        self.add(*x);
    }
    fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }
    fn total(&self) -> f64 {
        self.value()
    }
}

#[derive(Clone, Debug)]
pub struct RationalSum(BigRational);

impl Default for RationalSum {
    fn default() -> Self {
        RationalSum(<BigRational as Zero>::zero())
    }
}

impl Accumulator<BigRational> for RationalSum {
    fn push(&mut self, x: &BigRational) {
        self.0 += x;
    }
    fn merge(&mut self, other: &Self) {
        self.0 += &other.0;
    }
    fn total(&self) -> BigRational {
        self.0.clone()
    }
}

impl Scalar for f64 {
    type Key = u64;
    type Acc = Compensated;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn key(&self) -> u64 {
        self.to_bits()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

impl Scalar for BigRational {
    type Key = BigRational;
    type Acc = RationalSum;

    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    /// Recovers short fractions (`1/63`, `2/3`) exactly; anything else is taken
    /// at its exact binary value.
    fn from_f64(x: f64) -> Self {
        recover_rational(x, 1 << 20)
            .or_else(|| BigRational::from_float(x))
            .expect("finite value")
    }
    fn to_f64(&self) -> f64 {
        ratio_to_f64(self)
    }
    fn key(&self) -> BigRational {
        self.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

/// Converts a big rational to the nearest-ish double without overflowing on
/// huge numerators and denominators.
pub fn ratio_to_f64(r: &BigRational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    let nb = r.numer().bits() as i64;
    let db = r.denom().bits() as i64;
    let shift = nb - db - 60;
    let scaled = if shift >= 0 {
        r.numer() / (r.denom() << shift as usize)
    } else {
        (r.numer() << (-shift) as usize) / r.denom()
    };
    scaled.to_f64().unwrap_or(f64::NAN) * 2f64.powi(shift as i32)
}

/// Smallest-denominator fraction `p/q` (with `q <= max_den`) whose double
/// rounding equals `x`, found by walking the continued-fraction convergents.
pub fn recover_rational(x: f64, max_den: u64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    if x == x.trunc() && x.abs() < 9.0e15 {
        return Some(BigRational::from_integer(BigInt::from(x as i64)));
    }
    let exact = BigRational::from_float(x)?;
    let negative = exact.is_negative();
    let target = exact.abs();
    // convergents h/k
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut rem = target.clone();
    for _ in 0..64 {
        let a = rem.floor().to_integer();
        let h2 = &a * &h1 + &h0;
        let k2 = &a * &k1 + &k0;
        if k2 > BigInt::from(max_den) {
            return None;
        }
        let cand = BigRational::new(h2.clone(), k2.clone());
        let approx = ratio_to_f64(&cand);
        if approx == ToPrimitive::to_f64(&target).unwrap_or(f64::NAN) {
            return Some(if negative { -cand } else { cand });
        }
        let frac = &rem - BigRational::from_integer(a);
        if frac.is_zero() {
            return None;
        }
        rem = frac.recip();
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
    }
    None
}
