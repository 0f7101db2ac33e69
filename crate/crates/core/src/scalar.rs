//! Numeric abstraction for the cost and time model.
//!
//! Every formula in the broker (durations, run and egress charges, critical
//! paths, simulated clocks) is written once over [`Scalar`]. `f64` is the
//! working type; [`Exact`] (arbitrary-precision rationals) is used where two
//! independent routes must agree bit-for-bit regardless of summation order.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

/// Exact rational scalar.
pub type Exact = BigRational;

pub trait Scalar:
    Num + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Lifts a catalog or job quantity (always stored as `f64`) into this scalar.
    fn of(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(|| panic!("non-finite quantity {value}"))
    }

    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("usize fits every scalar")
    }

    fn approx(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `true` when `self` is greater than `other` by more than representation
    /// noise. Exact types use plain `>`; floats allow a relative slack so that
    /// bound-based pruning never discards a plan that ties after rounding.
    fn exceeds(&self, other: &Self) -> bool {
        self > other
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    fn abs_diff(&self, other: &Self) -> Self {
        if self > other {
            self.clone() - other.clone()
        } else {
            other.clone() - self.clone()
        }
    }
}

macro_rules! float_scalar {
    ($t:ty, $rel:expr, $abs:expr) => {
        impl Scalar for $t {
            fn exceeds(&self, other: &Self) -> bool {
                *self > *other + other.abs() * $rel + $abs
            }
        }
    };
}

float_scalar!(f64, 1e-9, 1e-12);
float_scalar!(f32, 1e-5, 1e-7);

impl Scalar for BigRational {
    fn of(value: f64) -> Self {
        BigRational::from_float(value).unwrap_or_else(|| panic!("non-finite quantity {value}"))
    }
}

/// Sums an iterator of scalars left to right.
pub fn sum<S: Scalar, I: IntoIterator<Item = S>>(items: I) -> S {
    items.into_iter().fold(S::zero(), |acc, x| acc + x)
}

/// Rounds `(baseline - value) / baseline` to a whole percentage.
pub fn savings_percent<S: Scalar>(baseline: &S, value: &S) -> i64 {
    if baseline.is_zero() {
        return 0;
    }
    let ratio = (baseline.clone() - value.clone()) / baseline.clone();
    (ratio.approx() * 100.0).round() as i64
}

/// Same as [`savings_percent`] but computed without going through floats.
pub fn exact_savings_percent(baseline: &Exact, value: &Exact) -> i64 {
    if baseline.is_zero() {
        return 0;
    }
    let pct = (baseline - value) * BigRational::from_integer(BigInt::from(100)) / baseline;
    let rounded = if pct.is_negative() {
        -((-pct) + BigRational::new(1.into(), 2.into())).floor()
    } else {
        (pct + BigRational::new(1.into(), 2.into())).floor()
    };
    rounded.to_integer().to_i64().unwrap_or(0)
}
