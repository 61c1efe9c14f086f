//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the network can be evaluated and differentiated in.
///
/// Implemented for `f32`, `f64` and, with the `quad` feature, the binary128
/// type used as a finite-difference oracle.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-for-f64 conversion from a literal or `f64` value.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Scalar converts to f64")
    }

    /// `Float::max` by `PartialOrd`; binary128's own `max` misorders
    /// negative operands.
    fn larger(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }

    /// `Float::min` by `PartialOrd`.
    fn smaller(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
#[cfg(feature = "quad")]
impl Scalar for f128::f128 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn order<T: Scalar>() {
        let v = |x: f64| T::of(x);
        assert_eq!(v(-0.5).larger(v(-0.4)), v(-0.4));
        assert_eq!(T::neg_infinity().larger(v(-0.5)), v(-0.5));
        assert_eq!(v(-0.5).smaller(v(-0.4)), v(-0.5));
        assert_eq!(T::nan().larger(v(2.0)), v(2.0));
        assert_eq!(v(2.0).smaller(T::nan()), v(2.0));
    }

    #[test]
    fn ordering_helpers_handle_negatives() {
        order::<f32>();
        order::<f64>();
        #[cfg(feature = "quad")]
        order::<f128::f128>();
    }
}
