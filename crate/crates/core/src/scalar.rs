//! Scalar abstraction for the numerical core.
//!
//! Everything downstream is generic over [`Scalar`], which is any IEEE float
//! with the `num-traits` surface we rely on. `f64` is the workhorse; `f32`
//! works but the default quadrature tolerances are tuned for double
//! precision. Special functions route through `f64` internally (see
//! [`crate::special`]).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 -> Scalar conversion failed")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Widening conversion used by the `f64`-backed special functions.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Scalar -> f64 conversion failed")
    }

    #[inline]
    fn half(self) -> Self {
        self / Self::of(2.0)
    }

    #[inline]
    fn sq(self) -> Self {
        self * self
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Debug + Display + Send + Sync + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        let x: f32 = Scalar::of(0.25);
        assert_eq!(x, 0.25f32);
        let y: f64 = Scalar::of_usize(7);
        assert_eq!(y, 7.0);
        assert_eq!(2.0f64.sq(), 4.0);
    }
}
