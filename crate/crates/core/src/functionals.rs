//! Cylinder functionals of a path, their three gradient notions, entropy
//! and Dirichlet-energy estimators, the log-Sobolev checks, and the
//! Clark-Ocone integrand for linear functionals.
//!
//! The damped gradient norm uses the algebraic identity
//! || K_F* (sum_i d_i 1_{[0,t_i]}) ||_{L2}^2 = sum_ij d_i d_j R_F(t_i, t_j),
//! so a functional's damped energy only needs the m x m covariance lattice
//! of its evaluation times; the direct quadrature of the squared K_F*
//! image is kept as a test-side oracle.

use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;

use crate::error::{FgError, Result};
use crate::grid_ops::{build_kf_star, build_kf_star_inv, GridFunction, TimeGrid};
use crate::kernels::KernelSpec;
use crate::quad::{integrate, QuadOpts};
use crate::report::MCEstimate;
use crate::sampling::{PathBatch, RngConfig};
use crate::scalar::Scalar;

type VecFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type TwoFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// G(path) = g(path(t_1), ..., path(t_m)) with analytic partials.
/// Times are snapped to grid nodes; the snap offsets are kept for reporting.
#[derive(Clone)]
pub struct CylinderFunctional<T> {
    pub name: String,
    node_indices: Vec<usize>,
    times: Vec<T>,
    offsets: Vec<T>,
    g: VecFn<T>,
    partials: Vec<VecFn<T>>,
}

impl<T: Scalar> CylinderFunctional<T> {
    pub fn new(
        grid: TimeGrid<T>,
        times: &[T],
        g: impl Fn(&[T]) -> T + Send + Sync + 'static,
        partials: Vec<VecFn<T>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if times.is_empty() || partials.len() != times.len() {
            return Err(FgError::Domain(
                "cylinder functional needs m >= 1 times and matching partials".into(),
            ));
        }
        let mut node_indices = Vec::with_capacity(times.len());
        let mut offsets = Vec::with_capacity(times.len());
        let mut snapped = Vec::with_capacity(times.len());
        for &t in times {
            let (i, off) = grid.snap(t);
            if i == 0 {
                return Err(FgError::Domain("cylinder times must be positive".into()));
            }
            node_indices.push(i);
            offsets.push(off);
            snapped.push(grid.node(i));
        }
        let out = Self {
            name: name.into(),
            node_indices,
            times: snapped,
            offsets,
            g: Arc::new(g),
            partials,
        };
        out.check_partials()?;
        Ok(out)
    }

    /// Partials must match central finite differences of g at a handful of
    /// pseudo-random points.
    fn check_partials(&self) -> Result<()> {
        let m = self.m();
        let mut rng = RngConfig::new(0x5eed).path_rng(u64::from(m as u32));
        let eps = T::of(1e-5);
        for _ in 0..10 {
            let x: Vec<T> = (0..m)
                .map(|_| T::of(((rng.next_u64() >> 11) as f64 / 9.007199254740992e15) * 4.0 - 2.0))
                .collect();
            for i in 0..m {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] = xp[i] + eps;
                xm[i] = xm[i] - eps;
                let fd = ((self.g)(&xp) - (self.g)(&xm)) / (T::of(2.0) * eps);
                let an = (self.partials[i])(&x);
                let rel = (fd - an).abs() / (an.abs() + T::one());
                if rel > T::of(1e-4) {
                    return Err(FgError::Domain(format!(
                        "partial {i} of {:?} disagrees with finite differences (rel {rel})",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn node_indices(&self) -> &[usize] {
        &self.node_indices
    }

    pub fn snap_offsets(&self) -> &[T] {
        &self.offsets
    }

    pub fn coords(&self, path_nodes: &[T]) -> Vec<T> {
        self.node_indices.iter().map(|&i| path_nodes[i]).collect()
    }

    pub fn eval(&self, path_nodes: &[T]) -> T {
        (self.g)(&self.coords(path_nodes))
    }

    pub fn eval_shifted(&self, path_nodes: &[T], shift_nodes: &[T]) -> T {
        let x: Vec<T> = self
            .node_indices
            .iter()
            .map(|&i| path_nodes[i] + shift_nodes[i])
            .collect();
        (self.g)(&x)
    }

    pub fn partial_at(&self, i: usize, coords: &[T]) -> T {
        (self.partials[i])(coords)
    }

    /// D_h G at a path: sum_i partial_i g * h(t_i).
    pub fn directional_derivative(&self, path_nodes: &[T], h_nodes: &[T]) -> T {
        let x = self.coords(path_nodes);
        let mut acc = T::zero();
        for (i, &idx) in self.node_indices.iter().enumerate() {
            acc = acc + (self.partials[i])(&x) * h_nodes[idx];
        }
        acc
    }

    /// Convenience constructor: G = sum a_i path(t_i).
    pub fn linear(grid: TimeGrid<T>, coeffs: &[(T, T)], name: impl Into<String>) -> Result<Self> {
        let times: Vec<T> = coeffs.iter().map(|(_, t)| *t).collect();
        let a: Vec<T> = coeffs.iter().map(|(a, _)| *a).collect();
        let a2 = a.clone();
        let partials: Vec<VecFn<T>> = (0..a.len())
            .map(|i| {
                let ai = a2[i];
                Arc::new(move |_x: &[T]| ai) as VecFn<T>
            })
            .collect();
        Self::new(
            grid,
            &times,
            move |x: &[T]| {
                x.iter()
                    .zip(a.iter())
                    .fold(T::zero(), |acc, (xi, ai)| acc + *xi * *ai)
            },
            partials,
            name,
        )
    }
}

impl<T: Scalar> std::fmt::Debug for CylinderFunctional<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "CylinderFunctional({:?}, m={}, nodes={:?})",
            self.name,
            self.m(),
            self.node_indices
        )
    }
}

/// One integrand g_i(s, x) of an integral-form functional, with its
/// x-derivative.
#[derive(Clone)]
pub struct L2Integrand<T> {
    pub g: TwoFn<T>,
    pub dg_dx: TwoFn<T>,
}

impl<T: Scalar> L2Integrand<T> {
    pub fn new(
        g: impl Fn(T, T) -> T + Send + Sync + 'static,
        dg_dx: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            g: Arc::new(g),
            dg_dx: Arc::new(dg_dx),
        }
    }
}

/// G(path) = g(int g_1(s, path_s) ds, ..., int g_m(s, path_s) ds).
#[derive(Clone)]
pub struct CylinderFunctionalL2<T> {
    pub name: String,
    g: VecFn<T>,
    partials: Vec<VecFn<T>>,
    integrands: Vec<L2Integrand<T>>,
}

impl<T: Scalar> CylinderFunctionalL2<T> {
    pub fn new(
        g: impl Fn(&[T]) -> T + Send + Sync + 'static,
        partials: Vec<VecFn<T>>,
        integrands: Vec<L2Integrand<T>>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if integrands.is_empty() || partials.len() != integrands.len() {
            return Err(FgError::Domain(
                "integral functional needs m >= 1 integrands and matching partials".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            g: Arc::new(g),
            partials,
            integrands,
        })
    }

    pub fn m(&self) -> usize {
        self.integrands.len()
    }

    /// Trapezoid values of the inner integrals on the path.
    pub fn inner_integrals(&self, grid: &TimeGrid<T>, path_nodes: &[T]) -> Vec<T> {
        let n = grid.n();
        let dt = grid.dt();
        self.integrands
            .iter()
            .map(|gi| {
                let f = |i: usize| (gi.g)(grid.node(i), path_nodes[i]);
                let mut acc = (f(0) + f(n)).half();
                for i in 1..n {
                    acc = acc + f(i);
                }
                acc * dt
            })
            .collect()
    }

    pub fn eval(&self, grid: &TimeGrid<T>, path_nodes: &[T]) -> T {
        (self.g)(&self.inner_integrals(grid, path_nodes))
    }

    /// L^2 gradient DG(t) = sum_i partial_i g * dg_i/dx (t, path_t), as a
    /// cell function (trapezoid-consistent endpoint averages).
    pub fn l2_grad(&self, grid: &TimeGrid<T>, path_nodes: &[T]) -> GridFunction<T> {
        let inner = self.inner_integrals(grid, path_nodes);
        let outer: Vec<T> = (0..self.m()).map(|i| (self.partials[i])(&inner)).collect();
        let node_val = |i: usize| {
            let mut acc = T::zero();
            for (k, gi) in self.integrands.iter().enumerate() {
                acc = acc + outer[k] * (gi.dg_dx)(grid.node(i), path_nodes[i]);
            }
            acc
        };
        let values: Vec<T> = (0..grid.n())
            .map(|c| (node_val(c) + node_val(c + 1)).half())
            .collect();
        GridFunction::cells(*grid, values)
    }
}

impl<T: Scalar> std::fmt::Debug for CylinderFunctionalL2<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CylinderFunctionalL2({:?}, m={})", self.name, self.m())
    }
}

/// ||nabla G||_H^2 = sum_ij d_i d_j (t_i ^ t_j): the Gram matrix of the
/// representers t -> t ^ t_i in the Brownian Cameron-Martin space.
pub fn ou_grad_norm<T: Scalar>(g: &CylinderFunctional<T>, path_nodes: &[T]) -> T {
    let x = g.coords(path_nodes);
    let d: Vec<T> = (0..g.m()).map(|i| g.partial_at(i, &x)).collect();
    let mut acc = T::zero();
    for i in 0..g.m() {
        for j in 0..g.m() {
            acc = acc + d[i] * d[j] * g.times()[i].min(g.times()[j]);
        }
    }
    acc
}

/// Precomputed covariance lattice for the damped gradient norm of one
/// functional under one kernel.
#[derive(Debug, Clone)]
pub struct DampedGradient<T> {
    gram: Vec<T>,
    m: usize,
}

impl<T: Scalar> DampedGradient<T> {
    pub fn new(spec: &KernelSpec<T>, g: &CylinderFunctional<T>) -> Result<Self> {
        let m = g.m();
        let mut gram = vec![T::zero(); m * m];
        for i in 0..m {
            for j in 0..=i {
                let v = spec.covariance(g.times()[i], g.times()[j])?;
                gram[i * m + j] = v;
                gram[j * m + i] = v;
            }
        }
        Ok(Self { gram, m })
    }

    pub fn norm_sq(&self, g: &CylinderFunctional<T>, path_nodes: &[T]) -> T {
        let x = g.coords(path_nodes);
        let d: Vec<T> = (0..self.m).map(|i| g.partial_at(i, &x)).collect();
        let mut acc = T::zero();
        for i in 0..self.m {
            for j in 0..self.m {
                acc = acc + d[i] * d[j] * self.gram[i * self.m + j];
            }
        }
        acc
    }
}

/// ||nabla^F G||_{H^F}^2 at one path.
pub fn damped_grad_norm<T: Scalar>(
    spec: &KernelSpec<T>,
    g: &CylinderFunctional<T>,
    path_nodes: &[T],
) -> Result<T> {
    Ok(DampedGradient::new(spec, g)?.norm_sq(g, path_nodes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnergyKind {
    Damped,
    Ou,
    L2,
}

/// Monte Carlo Dirichlet energy E ||nabla^F G||^2 over an F-Gaussian batch.
pub fn dirichlet_energy_damped<T: Scalar>(
    spec: &KernelSpec<T>,
    g: &CylinderFunctional<T>,
    fg: &PathBatch<T>,
) -> Result<MCEstimate<T>> {
    let dg = DampedGradient::new(spec, g)?;
    let vals: Vec<T> = fg.map_paths(|row| dg.norm_sq(g, row));
    MCEstimate::from_samples(&vals)?.guard_variance()
}

pub fn dirichlet_energy_ou<T: Scalar>(
    g: &CylinderFunctional<T>,
    fg: &PathBatch<T>,
) -> Result<MCEstimate<T>> {
    let vals: Vec<T> = fg.map_paths(|row| ou_grad_norm(g, row));
    MCEstimate::from_samples(&vals)?.guard_variance()
}

pub fn dirichlet_energy_l2<T: Scalar>(
    g: &CylinderFunctionalL2<T>,
    fg: &PathBatch<T>,
) -> Result<MCEstimate<T>> {
    let grid = fg.grid;
    let vals: Vec<T> = fg.map_paths(|row| g.l2_grad(&grid, row).l2_norm_sq());
    MCEstimate::from_samples(&vals)?.guard_variance()
}

/// Plug-in entropy of positive samples v: mean(v ln v) - mean(v) ln mean(v),
/// with a delta-method standard error.
pub fn entropy<T: Scalar>(samples: &[T]) -> Result<MCEstimate<T>> {
    if samples.len() < 2 {
        return Err(FgError::DegenerateInput("need at least two samples".into()));
    }
    let floor = T::of(1e-300);
    let n = T::of_usize(samples.len());
    let mean = samples.iter().copied().sum::<T>() / n;
    if mean <= T::zero() {
        return Err(FgError::DegenerateInput("entropy needs positive mass".into()));
    }
    let spread = samples.iter().fold((samples[0], samples[0]), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    if (spread.1 - spread.0).abs() <= T::of(1e-15) * (spread.1.abs() + T::one()) {
        // Ent of a constant is exactly zero (degenerate estimator)
        return Err(FgError::DegenerateInput("all samples equal".into()));
    }
    let vlnv: Vec<T> = samples
        .iter()
        .map(|v| {
            let v = (*v).max(floor);
            v * v.ln()
        })
        .collect();
    let ent = vlnv.iter().copied().sum::<T>() / n - mean * mean.ln();
    // influence function: v ln v - (1 + ln mean) v, centered
    let c = T::one() + mean.ln();
    let infl: Vec<T> = samples
        .iter()
        .zip(vlnv.iter())
        .map(|(v, vl)| *vl - c * *v)
        .collect();
    let im = infl.iter().copied().sum::<T>() / n;
    let var = infl.iter().map(|x| (*x - im).sq()).sum::<T>() / (n - T::one());
    Ok(MCEstimate {
        mean: ent,
        stderr: (var / n).sqrt(),
        n: samples.len(),
        z: None,
    })
}

/// One log-Sobolev gate: Ent(G^2) <= C * Energy, pass when
/// margin >= -z_gate * stderr(margin).
#[derive(Debug, Clone, Serialize)]
pub struct LsiReport<T> {
    pub kind: EnergyKind,
    pub name: String,
    pub ent: MCEstimate<T>,
    pub energy: MCEstimate<T>,
    pub constant: T,
    pub margin: T,
    pub margin_z: T,
    pub pass: bool,
    /// For the OU inequality: the squared-factor reading of the constant
    /// (the printed constant is reported in `constant`).
    pub alt: Option<LsiAlt<T>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LsiAlt<T> {
    pub constant: T,
    pub margin: T,
    pub margin_z: T,
    pub pass: bool,
}

fn lsi_gate<T: Scalar>(ent: &MCEstimate<T>, energy: &MCEstimate<T>, c: T, z_gate: T) -> (T, T, bool) {
    let margin = c * energy.mean - ent.mean;
    let stderr = ((c * energy.stderr).sq() + ent.stderr.sq()).sqrt();
    let z = margin / stderr.max(T::of(1e-300));
    (margin, z, z > -z_gate)
}

fn g_squared_samples<T: Scalar>(vals: Vec<T>) -> Vec<T> {
    vals.into_iter().map(|v| v.sq()).collect()
}

/// Damped inequality: Ent(G^2) <= 2 E ||nabla^F G||^2.
pub fn lsi_check_damped<T: Scalar>(
    spec: &KernelSpec<T>,
    g: &CylinderFunctional<T>,
    fg: &PathBatch<T>,
    z_gate: T,
) -> Result<LsiReport<T>> {
    let sq = g_squared_samples(fg.map_paths(|row| g.eval(row)));
    let ent = entropy(&sq)?;
    let energy = dirichlet_energy_damped(spec, g, fg)?;
    let c = T::of(2.0);
    let (margin, z, pass) = lsi_gate(&ent, &energy, c, z_gate);
    Ok(LsiReport {
        kind: EnergyKind::Damped,
        name: g.name.clone(),
        ent,
        energy,
        constant: c,
        margin,
        margin_z: z,
        pass,
        alt: None,
    })
}

/// The two readings of the OU constant: as printed,
/// C = 2(1+d) sup F(t,t) + 2((1+d)/d) ||dF/dt||_{L2([0,T]^2)},
/// and the squared-factor variant produced by the derivation chain,
/// C' = 2(1+d) sup F(t,t)^2 + 2((1+d)/d) ||dF/dt||^2.
pub fn ou_lsi_constants<T: Scalar>(spec: &KernelSpec<T>, delta: T) -> Result<(T, T)> {
    // sup F(t, t) over a lattice; singular-diagonal kernels are out of scope
    let mut sup = T::zero();
    for k in 1..=64 {
        let t = spec.horizon() * T::of(k as f64 / 64.0);
        let v = spec.eval(t, t).map_err(|_| {
            FgError::UnsupportedKernel("OU constant needs finite F(t, t)".into())
        })?;
        sup = sup.max(v);
    }
    // || dF/dt ||_{L2([0,T]^2)}^2 must be finite
    if let Some(p) = spec.sing_diag_df() {
        if 2.0 * p <= -1.0 {
            return Err(FgError::UnsupportedKernel(
                "dF/dt is not square integrable up to the diagonal".into(),
            ));
        }
    }
    let inner = |t: T| -> T {
        if t <= T::zero() {
            return T::zero();
        }
        let right = spec.sing_diag_df().map(|p| 2.0 * p);
        integrate(
            &|s: T| spec.df_dt_raw(t, s).sq(),
            T::zero(),
            t,
            None,
            right,
            &QuadOpts::with_rel_tol(1e-8),
        )
        .unwrap_or_else(|_| T::nan())
    };
    let df_sq = integrate(
        &inner,
        T::zero(),
        spec.horizon(),
        None,
        None,
        &QuadOpts::with_rel_tol(1e-7),
    )?;
    if !df_sq.is_finite() {
        return Err(FgError::UnsupportedKernel(
            "||dF/dt||_{L2} did not evaluate finitely".into(),
        ));
    }
    let two = T::of(2.0);
    let printed = two * (T::one() + delta) * sup + two * (T::one() + delta) / delta * df_sq.sqrt();
    let squared = two * (T::one() + delta) * sup.sq() + two * (T::one() + delta) / delta * df_sq;
    Ok((printed, squared))
}

/// OU inequality with both constant readings reported; the pass flags gate
/// each variant separately.
pub fn lsi_check_ou<T: Scalar>(
    spec: &KernelSpec<T>,
    g: &CylinderFunctional<T>,
    fg: &PathBatch<T>,
    delta: T,
    z_gate: T,
) -> Result<LsiReport<T>> {
    let sq = g_squared_samples(fg.map_paths(|row| g.eval(row)));
    let ent = entropy(&sq)?;
    let energy = dirichlet_energy_ou(g, fg)?;
    let (printed, squared) = ou_lsi_constants(spec, delta)?;
    let (margin, z, pass) = lsi_gate(&ent, &energy, printed, z_gate);
    let (margin2, z2, pass2) = lsi_gate(&ent, &energy, squared, z_gate);
    Ok(LsiReport {
        kind: EnergyKind::Ou,
        name: g.name.clone(),
        ent,
        energy,
        constant: printed,
        margin,
        margin_z: z,
        pass,
        alt: Some(LsiAlt {
            constant: squared,
            margin: margin2,
            margin_z: z2,
            pass: pass2,
        }),
    })
}

/// L^2 inequality: Ent(G^2) <= 2 ||F||_{L2([0,T]^2)}^2 E ||DG||_{L2}^2.
pub fn lsi_check_l2<T: Scalar>(
    spec: &KernelSpec<T>,
    g: &CylinderFunctionalL2<T>,
    fg: &PathBatch<T>,
    z_gate: T,
) -> Result<LsiReport<T>> {
    let grid = fg.grid;
    let sq = g_squared_samples(fg.map_paths(|row| g.eval(&grid, row)));
    let ent = entropy(&sq)?;
    let energy = dirichlet_energy_l2(g, fg)?;
    // ||F||^2_{L2([0,T]^2)} = int_0^T R(t, t) dt
    let norm_sq = integrate(
        &|t: T| {
            if t <= T::zero() {
                T::zero()
            } else {
                spec.covariance(t, t).unwrap_or_else(|_| T::nan())
            }
        },
        T::zero(),
        spec.horizon(),
        None,
        None,
        &QuadOpts::with_rel_tol(1e-8),
    )?;
    let c = T::of(2.0) * norm_sq;
    let (margin, z, pass) = lsi_gate(&ent, &energy, c, z_gate);
    Ok(LsiReport {
        kind: EnergyKind::L2,
        name: g.name.clone(),
        ent,
        energy,
        constant: c,
        margin,
        margin_z: z,
        pass,
        alt: None,
    })
}

/// Clark-Ocone integrand for a linear functional G = sum a_i path(t_i):
/// psi = (K_F*)^{-1} [ sum a_i F(t_i, .) 1_{. <= t_i} ], assembled as the
/// K_F* image of the indicator sum.
pub fn clark_ocone_linear<T: Scalar>(
    spec: &KernelSpec<T>,
    grid: &TimeGrid<T>,
    coeffs: &[(T, T)],
) -> Result<GridFunction<T>> {
    let kstar = build_kf_star(spec, grid)?;
    let inv = build_kf_star_inv(spec, grid)?;
    let mut cells = vec![T::zero(); grid.n()];
    for &(a, t) in coeffs {
        let (k, _) = grid.snap(t);
        for (c, cell) in cells.iter_mut().enumerate().take(k) {
            let _ = c;
            *cell = *cell + a;
        }
    }
    let image = kstar.apply(&GridFunction::cells(*grid, cells))?;
    inv.apply(&image)
}

/// The natural battery of point-evaluation functionals used by the checks.
pub fn standard_ou_battery<T: Scalar>(grid: TimeGrid<T>) -> Vec<CylinderFunctional<T>> {
    let t_max = grid.horizon();
    let half = t_max.half();
    let quarter = half.half();
    let mut out = Vec::new();
    out.push(CylinderFunctional::linear(grid, &[(T::one(), t_max)], "endpoint").unwrap());
    out.push(
        CylinderFunctional::new(
            grid,
            &[half, t_max],
            |x: &[T]| x[0] * x[1],
            vec![
                Arc::new(|x: &[T]| x[1]) as VecFn<T>,
                Arc::new(|x: &[T]| x[0]) as VecFn<T>,
            ],
            "product",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctional::new(
            grid,
            &[half],
            |x: &[T]| x[0].cos() + T::of(2.0),
            vec![Arc::new(|x: &[T]| -x[0].sin()) as VecFn<T>],
            "cosine",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctional::new(
            grid,
            &[t_max],
            |x: &[T]| x[0].tanh() + T::of(2.0),
            vec![Arc::new(|x: &[T]| T::one() - x[0].tanh().sq()) as VecFn<T>],
            "tanh",
        )
        .unwrap(),
    );
    // exp(lambda x / 2) with the argument clamped to |x| <= 5 keeps the
    // class bounded-Lipschitz while staying close to the extremal profile.
    let lambda = T::of(0.5);
    out.push(
        CylinderFunctional::new(
            grid,
            &[t_max],
            move |x: &[T]| {
                let c = x[0].max(T::of(-5.0)).min(T::of(5.0));
                (lambda * c.half()).exp()
            },
            vec![Arc::new(move |x: &[T]| {
                if x[0].abs() < T::of(5.0) {
                    let c = x[0];
                    lambda.half() * (lambda * c.half()).exp()
                } else {
                    T::zero()
                }
            }) as VecFn<T>],
            "clamped-exp",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctional::new(
            grid,
            &[quarter, half + quarter],
            |x: &[T]| T::one() / (T::one() + x[0].sq() + x[1].sq()),
            vec![
                Arc::new(|x: &[T]| {
                    let d = T::one() + x[0].sq() + x[1].sq();
                    -T::of(2.0) * x[0] / d.sq()
                }) as VecFn<T>,
                Arc::new(|x: &[T]| {
                    let d = T::one() + x[0].sq() + x[1].sq();
                    -T::of(2.0) * x[1] / d.sq()
                }) as VecFn<T>,
            ],
            "rational",
        )
        .unwrap(),
    );
    out
}

/// Battery of integral-form functionals.
pub fn standard_l2_battery<T: Scalar>() -> Vec<CylinderFunctionalL2<T>> {
    let mut out = Vec::new();
    out.push(
        CylinderFunctionalL2::new(
            |x: &[T]| x[0],
            vec![Arc::new(|_: &[T]| T::one()) as VecFn<T>],
            vec![L2Integrand::new(|_s, x| x, |_s, _x| T::one())],
            "path-mean",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctionalL2::new(
            |x: &[T]| x[0].tanh() + T::of(2.0),
            vec![Arc::new(|x: &[T]| T::one() - x[0].tanh().sq()) as VecFn<T>],
            vec![L2Integrand::new(|_s, x| x, |_s, _x| T::one())],
            "tanh-mean",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctionalL2::new(
            |x: &[T]| x[0].cos() + T::of(2.0),
            vec![Arc::new(|x: &[T]| -x[0].sin()) as VecFn<T>],
            vec![L2Integrand::new(|_s, x: T| x.sin(), |_s, x: T| x.cos())],
            "cos-of-sin-mean",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctionalL2::new(
            |x: &[T]| x[0].sq(),
            vec![Arc::new(|x: &[T]| T::of(2.0) * x[0]) as VecFn<T>],
            vec![L2Integrand::new(|_s, x| x, |_s, _x| T::one())],
            "squared-mean",
        )
        .unwrap(),
    );
    out.push(
        CylinderFunctionalL2::new(
            |x: &[T]| x[0] + (x[1].sin()).half(),
            vec![
                Arc::new(|_: &[T]| T::one()) as VecFn<T>,
                Arc::new(|x: &[T]| x[1].cos().half()) as VecFn<T>,
            ],
            vec![
                L2Integrand::new(|_s, x| x, |_s, _x| T::one()),
                L2Integrand::new(|s, x| s * x, |s, _x| s),
            ],
            "weighted-pair",
        )
        .unwrap(),
    );
    out
}
