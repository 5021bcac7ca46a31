//! Special functions, evaluated in `f64` and widened back to the caller's
//! scalar type. Accuracy is that of `statrs` (full double precision for the
//! error-function family, which is what the pricing code needs).

use crate::scalar::Scalar;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

pub fn gamma<T: Scalar>(x: T) -> T {
    T::of(statrs::function::gamma::gamma(x.to_f64_lossy()))
}

pub fn ln_gamma<T: Scalar>(x: T) -> T {
    T::of(statrs::function::gamma::ln_gamma(x.to_f64_lossy()))
}

pub fn beta<T: Scalar>(a: T, b: T) -> T {
    T::of(statrs::function::beta::beta(
        a.to_f64_lossy(),
        b.to_f64_lossy(),
    ))
}

/// Standard normal CDF via `erfc` (libm's correctly-rounded branch),
/// absolute error below 1e-15.
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    let x = x.to_f64_lossy();
    T::of(0.5 * libm::erfc(-x / std::f64::consts::SQRT_2))
}

fn std_normal() -> &'static Normal {
    static CELL: OnceLock<Normal> = OnceLock::new();
    CELL.get_or_init(|| Normal::new(0.0, 1.0).expect("standard normal"))
}

/// Standard normal quantile. `u` must lie in (0, 1).
pub fn norm_quantile(u: f64) -> f64 {
    std_normal().inverse_cdf(u)
}
