//! Test-only oracles, independent of the implementation paths they check.

/// Plain adaptive Simpson quadrature.
pub(crate) fn simpson_oracle(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let l = simpson(f, a, m);
        let r = simpson(f, m, b);
        if depth > 40 || (l + r - whole).abs() <= 15.0 * tol {
            return l + r + (l + r - whole) / 15.0;
        }
        rec(f, a, m, l, tol / 2.0, depth + 1) + rec(f, m, b, r, tol / 2.0, depth + 1)
    }
    let whole = simpson(f, a, b);
    rec(f, a, b, whole, tol, 0)
}
