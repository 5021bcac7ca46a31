//! Adaptive Gauss-Legendre quadrature with endpoint-singularity absorption.
//!
//! The integrands in this crate are smooth except for power-law behaviour
//! `(x - edge)^p`, `p > -1`, at one or both interval endpoints (fractional
//! kernels, their derivatives and reciprocals). A power-law endpoint is
//! removed exactly by the substitution `x = edge +/- v^q` with
//! `q = 1/(1 + p)`: the transformed integrand has a constant leading term,
//! so plain Gauss-Legendre regains its fast convergence. The remaining
//! fractional tails are handled by adaptive bisection.

use crate::error::{FgError, Result};
use crate::scalar::Scalar;
use std::sync::OnceLock;

/// Tolerances for [`integrate`]. The defaults target double precision.
#[derive(Debug, Clone, Copy)]
pub struct QuadOpts {
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadOpts {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_depth: 48,
        }
    }
}

impl QuadOpts {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed once by Newton
/// iteration on the Legendre recurrence.
fn gl_table(order: usize) -> &'static [(f64, f64)] {
    static T16: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    static T32: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    match order {
        16 => T16.get_or_init(|| legendre_nodes(16)),
        32 => T32.get_or_init(|| legendre_nodes(32)),
        _ => panic!("unsupported Gauss-Legendre order {order}"),
    }
}

fn legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        // Tricomi initial guess.
        let mut x = (std::f64::consts::PI * (k as f64 - 0.25) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_p_dp(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_p_dp(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out
}

fn legendre_p_dp(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Fixed-order Gauss-Legendre on [a, b].
pub fn gauss_legendre<T: Scalar>(f: &dyn Fn(T) -> T, a: T, b: T, order: usize) -> T {
    let half = (b - a).half();
    let mid = (a + b).half();
    let mut acc = T::zero();
    for &(x, w) in gl_table(order) {
        acc = acc + T::of(w) * f(mid + half * T::of(x));
    }
    acc * half
}

fn adaptive_rec<T: Scalar>(
    f: &dyn Fn(T) -> T,
    a: T,
    b: T,
    whole: T,
    eps: T,
    floor: T,
    depth: u32,
    opts: &QuadOpts,
) -> Result<T> {
    let mid = (a + b).half();
    let left = gauss_legendre(f, a, mid, 16);
    let right = gauss_legendre(f, mid, b, 16);
    let refined = left + right;
    let err = (refined - whole).abs();
    // `floor` is an absolute error floor tied to the scale of the whole
    // integral; without it, fractional tails near a transformed endpoint
    // recurse forever on subintervals whose contribution is negligible.
    if err <= eps || err <= floor {
        if !refined.is_finite() {
            return Err(FgError::NonIntegrable(
                "quadrature produced a non-finite value".into(),
            ));
        }
        return Ok(refined);
    }
    if depth >= opts.max_depth {
        return Err(FgError::QuadratureFailure {
            a: a.to_f64_lossy(),
            b: b.to_f64_lossy(),
            rel_tol: opts.rel_tol,
        });
    }
    let half_eps = eps.half();
    let l = adaptive_rec(f, a, mid, left, half_eps, floor, depth + 1, opts)?;
    let r = adaptive_rec(f, mid, b, right, half_eps, floor, depth + 1, opts)?;
    Ok(l + r)
}

fn smooth_pass<T: Scalar>(f: &dyn Fn(T) -> T, a: T, b: T, opts: &QuadOpts) -> Result<T> {
    if b <= a {
        return Ok(T::zero());
    }
    let coarse = gauss_legendre(f, a, b, 32);
    let ulp = T::epsilon() * T::of(32.0);
    let scale = coarse.abs() + T::of(1e-300);
    let eps = T::of(opts.rel_tol).max(ulp) * scale;
    let floor = ulp * scale;
    adaptive_rec(f, a, b, gauss_legendre(f, a, b, 16), eps, floor, 0, opts)
}

fn transformed_pass<T: Scalar>(
    g: &dyn Fn(T) -> T,
    edge: T,
    vmax: f64,
    q: f64,
    opts: &QuadOpts,
) -> Result<T> {
    if edge == T::zero() {
        // no cancellation: the distance v^q is computed exactly
        return smooth_pass(g, T::zero(), T::of(vmax), opts);
    }
    let ulp = T::epsilon().to_f64_lossy() * edge.abs().to_f64_lossy();
    let v_lo = (256.0 * ulp).powf(1.0 / q);
    if v_lo * 16.0 >= vmax {
        return smooth_pass(g, T::zero(), T::of(vmax), opts);
    }
    let lo = T::of(v_lo);
    let sliver = g(lo) * lo;
    let body = smooth_pass(g, lo, T::of(vmax), opts)?;
    Ok(body + sliver)
}

/// Integrate `f` over `[a, b]`.
///
/// `left` / `right` are optional power-law exponents: `left = Some(p)` means
/// `f(x) ~ C (x - a)^p` as `x -> a+` (and symmetrically for `right`). Both
/// exponents must exceed -1; anything else is reported as non-integrable.
pub fn integrate<T: Scalar>(
    f: &dyn Fn(T) -> T,
    a: T,
    b: T,
    left: Option<f64>,
    right: Option<f64>,
    opts: &QuadOpts,
) -> Result<T> {
    if b <= a {
        return Ok(T::zero());
    }
    for p in [left, right].into_iter().flatten() {
        if p <= -1.0 {
            return Err(FgError::NonIntegrable(format!(
                "endpoint exponent {p} <= -1"
            )));
        }
    }
    let significant = |p: Option<f64>| p.filter(|q| q.abs() > 1e-12);
    match (significant(left), significant(right)) {
        (None, None) => smooth_pass(f, a, b, opts),
        (Some(p), None) => {
            let q = 1.0 / (1.0 + p);
            // x = a + v^q, v in (0, (b-a)^{1/q}].
            let vmax = (b - a).to_f64_lossy().powf(1.0 / q);
            let qt = T::of(q);
            let g = move |v: T| f(a + v.powf(qt)) * qt * v.powf(qt - T::one());
            // For a > 0 the rounded distance (a + v^q) - a underflows once
            // v^q drops below a few ulp of a, and the integrand blows up
            // spuriously; replace that sliver by its leading-order mass.
            transformed_pass(&g, a, vmax, q, opts)
        }
        (None, Some(p)) => {
            let q = 1.0 / (1.0 + p);
            let vmax = (b - a).to_f64_lossy().powf(1.0 / q);
            let qt = T::of(q);
            let g = move |v: T| f(b - v.powf(qt)) * qt * v.powf(qt - T::one());
            transformed_pass(&g, b, vmax, q, opts)
        }
        (Some(_), Some(_)) => {
            let mid = (a + b).half();
            let l = integrate(f, a, mid, left, None, opts)?;
            let r = integrate(f, mid, b, None, right, opts)?;
            Ok(l + r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn opts() -> QuadOpts {
        QuadOpts::default()
    }

    #[test]
    fn polynomial_is_exact() {
        let v = gauss_legendre(&|x: f64| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 16);
        assert_relative_eq!(v, 4.0 - 4.0 + 2.0, epsilon = 1e-14);
    }

    #[test]
    fn smooth_integral() {
        let v = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, None, None, &opts()).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn left_singularity_absorbed() {
        // int_0^1 x^{-1/2} dx = 2
        let v = integrate(&|x: f64| x.powf(-0.5), 0.0, 1.0, Some(-0.5), None, &opts()).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn right_singularity_absorbed() {
        // int_0^1 (1-x)^{-1/4} dx = 4/3 and int_0^1 x (1-x)^{-1/4} dx = 4/3 - 4/7
        let f = |x: f64| (1.0 - x).powf(-0.25);
        let v = integrate(&f, 0.0, 1.0, None, Some(-0.25), &opts()).unwrap();
        assert_relative_eq!(v, 4.0 / 3.0, epsilon = 1e-12);
        let g = |x: f64| x * (1.0 - x).powf(-0.25);
        let v = integrate(&g, 0.0, 1.0, None, Some(-0.25), &opts()).unwrap();
        assert_relative_eq!(v, 4.0 / 3.0 - 4.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn fractional_vanishing_edge() {
        // int_0^1 x^{0.3} dx = 1/1.3
        let v = integrate(&|x: f64| x.powf(0.3), 0.0, 1.0, Some(0.3), None, &opts()).unwrap();
        assert_relative_eq!(v, 1.0 / 1.3, epsilon = 1e-12);
    }

    #[test]
    fn double_singularity_beta_integral() {
        // int_0^1 x^{-1/2}(1-x)^{-1/2} dx = pi
        let f = |x: f64| x.powf(-0.5) * (1.0 - x).powf(-0.5);
        let v = integrate(&f, 0.0, 1.0, Some(-0.5), Some(-0.5), &opts()).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI, epsilon = 1e-11);
    }

    #[test]
    fn rejects_non_integrable_exponent() {
        let r = integrate(&|x: f64| 1.0 / x, 0.0, 1.0, Some(-1.0), None, &opts());
        assert!(r.is_err());
    }
}
