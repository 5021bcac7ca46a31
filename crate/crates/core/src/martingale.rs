//! The martingale M(t) = int_0^t Theta(t, s)/zeta2(s) dB^F_s and its
//! structural checks.
//!
//! The reduction F(s,s) Theta(t,s)/zeta2(s) + int_s^t dF(u,s)/du
//! Theta(t,u)/zeta2(u) du collapses, for kernels with (A4) data, to a
//! function zeta1(s) of s alone; that t-independence is verified by a
//! sweep, and the reduced integrand then gives the exact-in-expectation
//! route M(t) = sum zeta1 dB used for the statistical gates. The direct
//! B^F-route is kept alongside; the two only differ by discretization, so
//! their gap is tested as a refinement order, not a fixed tolerance.

use serde::Serialize;

use crate::error::{FgError, Result};
use crate::grid_ops::{GridFunction, TimeGrid};
use crate::kernels::KernelSpec;
use crate::quad::integrate;
use crate::report::MCEstimate;
use crate::sampling::{bf_integral_to, PathBatch, PathKind};
use crate::scalar::Scalar;

/// Result of the zeta1 reduction: cell values of zeta1 and the worst
/// relative t-spread seen in the sweep.
#[derive(Debug, Clone)]
pub struct MartingaleData<T> {
    pub zeta1: GridFunction<T>,
    pub spread: f64,
}

/// Evaluate the reduction at (s, t) pairs across a t-sweep and check that
/// the value does not depend on t.
pub fn zeta1_reduce<T: Scalar>(spec: &KernelSpec<T>, grid: &TimeGrid<T>) -> Result<MartingaleData<T>> {
    let inv = spec.inversion().ok_or_else(|| {
        FgError::MissingInversionData("the martingale construction needs (A4) data".into())
    })?;
    let t_max = spec.horizon();
    let theta_p = inv.theta.diag_exponent().filter(|p| p.abs() > 1e-12);
    let f1_diag = spec.sing_diag_df();
    let diag_term = |s: T, t: T| -> Result<T> {
        match spec.sing_diag() {
            Some(p) if p > 0.0 => Ok(T::zero()),
            Some(_) => Err(FgError::UnsupportedKernel(
                "reduction needs finite F(s, s)".into(),
            )),
            None => Ok(spec.eval(s, s)? * inv.theta.eval(t, s) / inv.zeta2.eval(s)),
        }
    };
    let value_at = |s: T, t: T| -> Result<T> {
        let f = |u: T| spec.df_dt_raw(u, s) * inv.theta.eval(t, u) / inv.zeta2.eval(u);
        let tail = integrate(&f, s, t, f1_diag, theta_p, spec.quad_opts())?;
        Ok(diag_term(s, t)? + tail)
    };

    let n = grid.n();
    let mut cells = vec![T::zero(); n];
    let mut worst = 0.0f64;
    for (c, cell) in cells.iter_mut().enumerate() {
        let s = grid.midpoint(c);
        let mut vals = Vec::with_capacity(5);
        for k in 1..=5 {
            let t = s + (t_max - s) * T::of(k as f64 / 5.0);
            vals.push(value_at(s, t)?);
        }
        let mut lo = vals[0];
        let mut hi = vals[0];
        let mut sum = T::zero();
        for v in &vals {
            lo = lo.min(*v);
            hi = hi.max(*v);
            sum = sum + *v;
        }
        let mean = sum / T::of(5.0);
        let spread = ((hi - lo).abs() / (mean.abs() + T::of(1e-300))).to_f64_lossy();
        worst = worst.max(spread);
        *cell = mean;
    }
    if worst > 1e-4 {
        return Err(FgError::NotReducible {
            spread: worst,
            tol: 1e-4,
        });
    }
    Ok(MartingaleData {
        zeta1: GridFunction::cells(*grid, cells),
        spread: worst,
    })
}

/// Both per-path routes to M(t): the B^F-integral of Theta(t, .)/zeta2 and
/// the reduced Brownian integral of zeta1.
#[derive(Debug, Clone)]
pub struct MRoutes<T> {
    pub bf_route: Vec<T>,
    pub reduced: Vec<T>,
}

/// Cell averages of Theta(t, .)/zeta2 on [0, t], for the B^F route.
pub fn martingale_integrand_cells<T: Scalar>(
    spec: &KernelSpec<T>,
    grid: &TimeGrid<T>,
    t_index: usize,
) -> Result<GridFunction<T>> {
    let inv = spec.inversion().ok_or_else(|| {
        FgError::MissingInversionData("the martingale construction needs (A4) data".into())
    })?;
    let t = grid.node(t_index);
    let dt = grid.dt();
    let theta_p = inv.theta.diag_exponent().filter(|p| p.abs() > 1e-12);
    if let Some(p) = theta_p {
        if p <= -1.0 {
            return Err(FgError::NonIntegrable(
                "Theta(t, .)/zeta2 is not integrable near the diagonal".into(),
            ));
        }
    }
    let mut cells = vec![T::zero(); grid.n()];
    for (c, cell) in cells.iter_mut().enumerate().take(t_index) {
        let a = grid.node(c);
        let b = grid.node(c + 1);
        let f = |s: T| inv.theta.eval(t, s) / inv.zeta2.eval(s);
        let right = if c + 1 == t_index { theta_p } else { None };
        let left = if c == 0 {
            inv.zeta2.zero_exponent().map(|e| -e).filter(|e| e.abs() > 1e-12)
        } else {
            None
        };
        *cell = integrate(&f, a, b, left, right, spec.quad_opts())? / dt;
    }
    Ok(GridFunction::cells(*grid, cells))
}

pub fn sample_m<T: Scalar>(
    spec: &KernelSpec<T>,
    data: &MartingaleData<T>,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    t_index: usize,
) -> Result<MRoutes<T>> {
    if bm.kind != PathKind::Brownian || fg.kind != PathKind::FGaussian {
        return Err(FgError::ConventionMismatch {
            expected: "(brownian, f-gaussian) batch pair",
            got: "other",
        });
    }
    let psi = martingale_integrand_cells(spec, &fg.grid, t_index)?;
    let bf_route = bf_integral_to(&psi, fg, t_index)?;
    let z1 = &data.zeta1.values;
    let reduced: Vec<T> = bm.map_paths(|inc| {
        let mut acc = T::zero();
        for c in 0..t_index {
            acc = acc + z1[c] * inc[c];
        }
        acc
    });
    Ok(MRoutes { bf_route, reduced })
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingalePairCase<T> {
    pub s_index: usize,
    pub t_index: usize,
    /// E[M_s M_t] against int_0^s zeta1^2 du.
    pub cov: MCEstimate<T>,
    pub cov_target: T,
    /// E[(M_t - M_s) phi(M_s)] for phi = id and phi = tanh.
    pub orth_linear_z: T,
    pub orth_tanh_z: T,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport<T> {
    pub spread: f64,
    pub cases: Vec<MartingalePairCase<T>>,
    /// RMS gap between the B^F route and the reduced route at each t.
    pub route_rms: Vec<T>,
    pub pass: bool,
}

/// Orthogonal-increment + nonlinear-orthogonality check of the martingale
/// structure on (s, t) node-index pairs.
pub fn martingale_check<T: Scalar>(
    spec: &KernelSpec<T>,
    data: &MartingaleData<T>,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    pairs: &[(usize, usize)],
    z_gate: T,
) -> Result<MartingaleReport<T>> {
    let dt = bm.grid.dt();
    let z1 = &data.zeta1.values;
    let mut cases = Vec::new();
    let mut route_rms = Vec::new();
    for &(si, ti) in pairs {
        if si >= ti {
            return Err(FgError::Domain("martingale pairs need s < t".into()));
        }
        let ms = sample_m(spec, data, bm, fg, si)?;
        let mt = sample_m(spec, data, bm, fg, ti)?;
        let target: T = (0..si).map(|c| z1[c].sq()).sum::<T>() * dt;
        let prods: Vec<T> = ms
            .reduced
            .iter()
            .zip(mt.reduced.iter())
            .map(|(a, b)| *a * *b)
            .collect();
        let cov = MCEstimate::from_samples(&prods)?.versus(target);
        let lin: Vec<T> = ms
            .reduced
            .iter()
            .zip(mt.reduced.iter())
            .map(|(a, b)| (*b - *a) * *a)
            .collect();
        let lin_z = MCEstimate::from_samples(&lin)?.versus(T::zero()).z.unwrap();
        let tanh: Vec<T> = ms
            .reduced
            .iter()
            .zip(mt.reduced.iter())
            .map(|(a, b)| (*b - *a) * a.tanh())
            .collect();
        let tanh_z = MCEstimate::from_samples(&tanh)?.versus(T::zero()).z.unwrap();
        let pass = cov.z.unwrap().abs() < z_gate && lin_z.abs() < z_gate && tanh_z.abs() < z_gate;
        let gap: T = ms
            .bf_route
            .iter()
            .zip(ms.reduced.iter())
            .map(|(a, b)| (*a - *b).sq())
            .sum::<T>()
            / T::of_usize(ms.reduced.len());
        route_rms.push(gap.sqrt());
        cases.push(MartingalePairCase {
            s_index: si,
            t_index: ti,
            cov,
            cov_target: target,
            orth_linear_z: lin_z,
            orth_tanh_z: tanh_z,
            pass,
        });
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(MartingaleReport {
        spread: data.spread,
        cases,
        route_rms,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::kernels::SmoothFn;
    use crate::sampling::{coarsen_brownian, sample_brownian, volterra_transform, RngConfig};
    use crate::special::gamma;
    use approx::assert_relative_eq;

    fn grid() -> TimeGrid<f64> {
        TimeGrid::new(1.0, 64).unwrap()
    }

    #[test]
    fn reduction_trivial_and_fractional() {
        let g = grid();
        let id = KernelSpec::identity(1.0);
        let d = zeta1_reduce(&id, &g).unwrap();
        assert!(d.zeta1.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        // separable f: Theta = 1, zeta2 = f, reduction gives 1
        let sep = KernelSpec::separable(SmoothFn::from_expr(&Expr::parse("1+s").unwrap()), 1.0);
        let d = zeta1_reduce(&sep, &g).unwrap();
        assert!(d.zeta1.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        // fractional: zeta1 = Gamma(1 - a) f1
        let rl = KernelSpec::riemann_liouville(0.5, SmoothFn::one(), SmoothFn::one(), 1.0).unwrap();
        let d = zeta1_reduce(&rl, &g).unwrap();
        let want = gamma(0.5f64);
        for v in &d.zeta1.values {
            assert_relative_eq!(v, &want, max_relative = 1e-6);
        }
        assert!(d.spread < 1e-4);
    }

    #[test]
    fn reduction_fbm_power_law() {
        let g = grid();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let d = zeta1_reduce(&spec, &g).unwrap();
        // zeta1(s) proportional to s^{1/2 - H}
        let ratio = d.zeta1.values[40] / d.zeta1.values[10];
        let want = (g.midpoint(40) / g.midpoint(10)).powf(-0.2);
        assert_relative_eq!(ratio, want, max_relative = 1e-5);
    }

    #[test]
    fn missing_data_is_reported() {
        let g = grid();
        let custom = KernelSpec::custom(|_t, _s| 1.0, |_t, _s| 0.0, 1.0);
        assert!(matches!(
            zeta1_reduce(&custom, &g),
            Err(FgError::MissingInversionData(_))
        ));
    }

    #[test]
    fn identity_kernel_routes_coincide_with_brownian() {
        let g = grid();
        let id = KernelSpec::identity(1.0);
        let data = zeta1_reduce(&id, &g).unwrap();
        let bm = sample_brownian(g, RngConfig::new(3), 32);
        let fg = volterra_transform(&id, &bm).unwrap();
        let m = sample_m(&id, &data, &bm, &fg, 48).unwrap();
        for p in 0..32 {
            let b48: f64 = bm.path(p)[..48].iter().sum();
            assert_relative_eq!(m.reduced[p], b48, max_relative = 1e-9);
            assert_relative_eq!(m.bf_route[p], b48, max_relative = 1e-9);
        }
    }

    #[test]
    fn martingale_check_brownian_case() {
        let g = grid();
        let id = KernelSpec::identity(1.0);
        let data = zeta1_reduce(&id, &g).unwrap();
        let bm = sample_brownian(g, RngConfig::new(5), 50_000);
        let fg = volterra_transform(&id, &bm).unwrap();
        let rep = martingale_check(&id, &data, &bm, &fg, &[(32, 64)], 4.0).unwrap();
        assert!(rep.pass);
        assert_relative_eq!(rep.cases[0].cov_target, 0.5, max_relative = 1e-8);
    }

    #[test]
    fn route_gap_shrinks_under_refinement() {
        // Example-style fbm integrand (t-s)^{1/2-H} s^{1/2-H}; coupled paths
        let spec = KernelSpec::<f64>::fbm(0.7, 1.0).unwrap();
        let fine_grid = TimeGrid::new(1.0, 128).unwrap();
        let fine = sample_brownian(fine_grid, RngConfig::new(7), 512);
        let mut rms = Vec::new();
        for factor in [4usize, 2, 1] {
            let bm = if factor == 1 {
                fine.clone()
            } else {
                coarsen_brownian(&fine, factor).unwrap()
            };
            let gg = bm.grid;
            let data = zeta1_reduce(&spec, &gg).unwrap();
            let fg = volterra_transform(&spec, &bm).unwrap();
            let m = sample_m(&spec, &data, &bm, &fg, gg.n()).unwrap();
            let gap: f64 = m
                .bf_route
                .iter()
                .zip(m.reduced.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / m.reduced.len() as f64;
            rms.push(gap.sqrt());
        }
        assert!(rms[2] < rms[1] && rms[1] < rms[0], "rms {rms:?}");
        let order = (rms[0] / rms[2]).log2() / 2.0;
        assert!(order >= 0.5, "route agreement order {order}, rms {rms:?}");
    }
}
