//! Numeric abstraction shared by the cell-level identification math and the
//! finite-support oracles.
//!
//! Everything that only needs field arithmetic and ordering is written against
//! [`Scalar`], so the same code runs on `f64`, `f32` and exact rationals
//! ([`Exact`]). Code that needs `sqrt` or special functions uses [`Real`].

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Exact rational scalar used by the oracles when tolerance-free checks are needed.
pub type Exact = BigRational;

pub trait Scalar:
    Num + Signed + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }

    /// Lossless for rationals, `as`-style for floats. Panics on non-finite input.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite value")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `1{x >= 0} - 1{x < 0}`; zero maps to +1.
    fn sgn(&self) -> Self {
        if *self >= Self::zero() {
            Self::one()
        } else {
            -Self::one()
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }

    fn sum_iter<I: IntoIterator<Item = Self>>(it: I) -> Self {
        it.into_iter().fold(Self::zero(), |acc, x| acc + x)
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).expect("int") / Self::from_i64(den).expect("int")
    }
}

impl Scalar for f64 {}
impl Scalar for f32 {}
impl Scalar for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

/// Floating-point scalars for statistics that need `sqrt` and friends.
pub trait Real: Scalar + Float {}

impl Real for f64 {}
impl Real for f32 {}
