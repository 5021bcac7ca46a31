//! Path generation for the driving Brownian motion and the F-Gaussian
//! process, plus the discrete B^F-integral and its Brownian-side route.
//!
//! Reproducibility contract: every path draws from its own counter-based
//! substream (ChaCha, stream = path index) and normals come from the
//! inverse CDF, one uniform per normal. Batches are therefore bit-identical
//! for a given (seed, grid, n_paths) regardless of how many worker threads
//! fill them, and reductions over paths are performed in index order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgError, Result};
use crate::grid_ops::{build_kf, build_kf_star, build_rf_matrix, GridFunction, SampleKind, TimeGrid};
use crate::kernels::KernelSpec;
use crate::linalg::cholesky_with_jitter;
use crate::scalar::Scalar;
use crate::special::norm_quantile;

/// Seed plus the per-path substream policy (stream = path index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngConfig {
    pub seed: u64,
}

impl RngConfig {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn path_rng(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        rng
    }
}

/// Standard normal draw by inverse CDF on a 53-bit uniform in (0, 1).
#[inline]
pub fn standard_normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0);
    T::of(norm_quantile(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathKind {
    /// Rows hold the n Brownian increments.
    Brownian,
    /// Rows hold the n + 1 node values of B^F (node 0 is 0).
    FGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Provenance {
    BrownianIncrements,
    Volterra,
    Cholesky { jitter: f64 },
}

/// A seeded ensemble of sample paths, row-major over paths.
#[derive(Debug, Clone)]
pub struct PathBatch<T> {
    pub grid: TimeGrid<T>,
    pub kind: PathKind,
    pub provenance: Provenance,
    pub rng: RngConfig,
    n_paths: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> PathBatch<T> {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn path(&self, p: usize) -> &[T] {
        &self.values[p * self.width..(p + 1) * self.width]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks(self.width)
    }

    pub fn par_paths(&self) -> rayon::slice::Chunks<'_, T> {
        self.values.par_chunks(self.width)
    }

    /// Column of values at a fixed index across the batch.
    pub fn column(&self, idx: usize) -> Vec<T> {
        (0..self.n_paths)
            .map(|p| self.values[p * self.width + idx])
            .collect()
    }

    /// Map over paths in index order; the output is worker-count independent.
    pub fn map_paths<U: Send>(&self, f: impl Fn(&[T]) -> U + Sync) -> Vec<U> {
        self.par_paths().map(|row| f(row)).collect()
    }
}

/// Centered Gaussian increments with variance dt, one substream per path.
pub fn sample_brownian<T: Scalar>(grid: TimeGrid<T>, rng: RngConfig, n_paths: usize) -> PathBatch<T> {
    let n = grid.n();
    let sd = grid.dt().sqrt();
    let mut values = vec![T::zero(); n_paths * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(p, row)| {
            let mut r = rng.path_rng(p as u64);
            for slot in row.iter_mut() {
                *slot = sd * standard_normal::<T>(&mut r);
            }
        });
    PathBatch {
        grid,
        kind: PathKind::Brownian,
        provenance: Provenance::BrownianIncrements,
        rng,
        n_paths,
        width: n,
        values,
    }
}

/// B^F via the Volterra representation: node value i+1 is the sum over
/// cells j <= i of the cell-averaged kernel against the Brownian increment,
/// i.e. the K_F weights applied to the white-noise cell function.
pub fn volterra_transform<T: Scalar>(
    spec: &KernelSpec<T>,
    bm: &PathBatch<T>,
) -> Result<PathBatch<T>> {
    if bm.kind != PathKind::Brownian {
        return Err(FgError::ConventionMismatch {
            expected: "Brownian increments",
            got: "F-Gaussian nodes",
        });
    }
    let grid = bm.grid;
    let n = grid.n();
    let kf = build_kf(spec, &grid)?;
    let inv_dt = T::one() / grid.dt();
    let weights = kf.dense();
    let mut values = vec![T::zero(); bm.n_paths * (n + 1)];
    values
        .par_chunks_mut(n + 1)
        .enumerate()
        .for_each(|(p, out)| {
            let inc = bm.path(p);
            for i in 0..n {
                let row = &weights[i * n..i * n + i + 1];
                let mut acc = T::zero();
                for (w, db) in row.iter().zip(inc.iter()) {
                    acc = acc + *w * *db;
                }
                out[i + 1] = acc * inv_dt;
            }
        });
    Ok(PathBatch {
        grid,
        kind: PathKind::FGaussian,
        provenance: Provenance::Volterra,
        rng: bm.rng,
        n_paths: bm.n_paths,
        width: n + 1,
        values,
    })
}

/// Exact Gaussian sampling of the node law from the Cholesky factor of the
/// covariance matrix (cross-validation sampler).
pub fn cholesky_sample<T: Scalar>(
    spec: &KernelSpec<T>,
    grid: TimeGrid<T>,
    rng: RngConfig,
    n_paths: usize,
) -> Result<PathBatch<T>> {
    let n = grid.n();
    let full = build_rf_matrix(spec, &grid)?;
    let dim = n + 1;
    // nodes 1..=n; node 0 is the a.s. zero
    let mut cov = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = full[(i + 1) * dim + (j + 1)];
        }
    }
    let (l, jitter) = cholesky_with_jitter(&cov, n, T::of(1e-12))?;
    let mut values = vec![T::zero(); n_paths * (n + 1)];
    values
        .par_chunks_mut(n + 1)
        .enumerate()
        .for_each(|(p, out)| {
            let mut r = rng.path_rng(p as u64);
            let z: Vec<T> = (0..n).map(|_| standard_normal::<T>(&mut r)).collect();
            for k in 0..n {
                let mut acc = T::zero();
                for j in 0..=k {
                    acc = acc + l[k * n + j] * z[j];
                }
                out[k + 1] = acc;
            }
        });
    Ok(PathBatch {
        grid,
        kind: PathKind::FGaussian,
        provenance: Provenance::Cholesky {
            jitter: jitter.to_f64_lossy(),
        },
        rng,
        n_paths,
        width: n + 1,
        values,
    })
}

/// Cameron-Martin image h^F = K_F hdot (node-valued).
pub fn cameron_martin_shift<T: Scalar>(
    spec: &KernelSpec<T>,
    hdot: &GridFunction<T>,
) -> Result<GridFunction<T>> {
    let kf = build_kf(spec, &hdot.grid)?;
    kf.apply(hdot)
}

/// Per-path B^F-integral: sum of cell averages of psi against the B^F
/// increments.
pub fn bf_integral<T: Scalar>(psi: &GridFunction<T>, paths: &PathBatch<T>) -> Result<Vec<T>> {
    bf_integral_to(psi, paths, paths.grid.n())
}

/// Same, stopping at node `upto` (integral over [0, t_upto]).
pub fn bf_integral_to<T: Scalar>(
    psi: &GridFunction<T>,
    paths: &PathBatch<T>,
    upto: usize,
) -> Result<Vec<T>> {
    if paths.kind != PathKind::FGaussian {
        return Err(FgError::ConventionMismatch {
            expected: "F-Gaussian nodes",
            got: "Brownian increments",
        });
    }
    if psi.kind != SampleKind::Cells || psi.grid != paths.grid {
        return Err(FgError::ConventionMismatch {
            expected: "cells on the batch grid",
            got: psi.kind.name_for_err(),
        });
    }
    let vals = &psi.values;
    Ok(paths.map_paths(|row| {
        let mut acc = T::zero();
        for c in 0..upto {
            acc = acc + vals[c] * (row[c + 1] - row[c]);
        }
        acc
    }))
}

impl SampleKind {
    fn name_for_err(self) -> &'static str {
        match self {
            SampleKind::Cells => "cells",
            SampleKind::Nodes => "nodes",
        }
    }
}

/// The Brownian-side route int K_F* psi dB for a precomputed K_F* psi.
pub fn brownian_integral<T: Scalar>(kstar_psi: &GridFunction<T>, bm: &PathBatch<T>) -> Result<Vec<T>> {
    if bm.kind != PathKind::Brownian {
        return Err(FgError::ConventionMismatch {
            expected: "Brownian increments",
            got: "F-Gaussian nodes",
        });
    }
    if kstar_psi.kind != SampleKind::Cells || kstar_psi.grid != bm.grid {
        return Err(FgError::ConventionMismatch {
            expected: "cells on the batch grid",
            got: "other",
        });
    }
    let vals = &kstar_psi.values;
    Ok(bm.map_paths(|inc| {
        let mut acc = T::zero();
        for (v, db) in vals.iter().zip(inc.iter()) {
            acc = acc + *v * *db;
        }
        acc
    }))
}

/// int psi dB^F computed through the identity with the underlying Brownian
/// motion: apply K_F* to psi, then integrate against dB.
pub fn bf_integral_via_brownian<T: Scalar>(
    spec: &KernelSpec<T>,
    psi: &GridFunction<T>,
    bm: &PathBatch<T>,
) -> Result<Vec<T>> {
    let kstar = build_kf_star(spec, &bm.grid)?;
    let kpsi = kstar.apply(psi)?;
    brownian_integral(&kpsi, bm)
}

/// Aggregate Brownian increments by `factor` (coupled coarse path for
/// refinement studies).
pub fn coarsen_brownian<T: Scalar>(bm: &PathBatch<T>, factor: usize) -> Result<PathBatch<T>> {
    if bm.kind != PathKind::Brownian {
        return Err(FgError::ConventionMismatch {
            expected: "Brownian increments",
            got: "F-Gaussian nodes",
        });
    }
    let n = bm.grid.n();
    if factor == 0 || n % factor != 0 {
        return Err(FgError::Domain(format!(
            "coarsening factor {factor} does not divide n = {n}"
        )));
    }
    let m = n / factor;
    let grid = TimeGrid::new(bm.grid.horizon(), m)?;
    let mut values = vec![T::zero(); bm.n_paths * m];
    values
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(p, out)| {
            let inc = bm.path(p);
            for (c, slot) in out.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in 0..factor {
                    acc = acc + inc[c * factor + k];
                }
                *slot = acc;
            }
        });
    Ok(PathBatch {
        grid,
        kind: PathKind::Brownian,
        provenance: Provenance::BrownianIncrements,
        rng: bm.rng,
        n_paths: bm.n_paths,
        width: m,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::MCEstimate;
    use approx::assert_relative_eq;

    fn grid64() -> TimeGrid<f64> {
        TimeGrid::new(1.0, 64).unwrap()
    }

    #[test]
    fn brownian_batch_moments() {
        let grid = grid64();
        let bm = sample_brownian(grid, RngConfig::new(7), 100_000);
        let totals: Vec<f64> = bm.map_paths(|inc| inc.iter().sum());
        let est = MCEstimate::from_samples(&totals).unwrap().versus(0.0);
        assert!(est.z.unwrap().abs() < 3.0, "mean z {:?}", est.z);
        let sq: Vec<f64> = totals.iter().map(|x| x * x).collect();
        let est = MCEstimate::from_samples(&sq).unwrap().versus(1.0);
        assert!(est.z.unwrap().abs() < 3.5, "var z {:?}", est.z);
    }

    #[test]
    fn determinism_across_worker_counts() {
        let grid = grid64();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let (a, fa) = pool1.install(|| {
            let bm = sample_brownian(grid, RngConfig::new(42), 512);
            let f = volterra_transform(&spec, &bm).unwrap();
            (bm, f)
        });
        let (b, fb) = pool4.install(|| {
            let bm = sample_brownian(grid, RngConfig::new(42), 512);
            let f = volterra_transform(&spec, &bm).unwrap();
            (bm, f)
        });
        assert_eq!(a.values, b.values);
        assert_eq!(fa.values, fb.values);
    }

    #[test]
    fn volterra_identity_is_partial_sums() {
        let grid = grid64();
        let bm = sample_brownian(grid, RngConfig::new(3), 16);
        let spec = KernelSpec::identity(1.0);
        let fg = volterra_transform(&spec, &bm).unwrap();
        for p in 0..16 {
            let inc = bm.path(p);
            let nodes = fg.path(p);
            let mut acc = 0.0;
            for i in 0..grid.n() {
                acc += inc[i];
                assert_relative_eq!(nodes[i + 1], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn volterra_constant_scales_brownian() {
        let grid = grid64();
        let bm = sample_brownian(grid, RngConfig::new(5), 8);
        let c = KernelSpec::constant(2.5, 1.0);
        let fg = volterra_transform(&c, &bm).unwrap();
        let id = volterra_transform(&KernelSpec::identity(1.0), &bm).unwrap();
        for p in 0..8 {
            for i in 0..=grid.n() {
                assert_relative_eq!(fg.path(p)[i], 2.5 * id.path(p)[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn volterra_covariance_matches_quadrature() {
        let grid = grid64();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let bm = sample_brownian(grid, RngConfig::new(11), 40_000);
        let fg = volterra_transform(&spec, &bm).unwrap();
        for &(i, j) in &[(16usize, 16usize), (32, 16), (64, 48)] {
            let xi = fg.column(i);
            let xj = fg.column(j);
            let (c, se) = crate::report::covariance_with_stderr(&xi, &xj).unwrap();
            let want = spec.covariance(grid.node(i), grid.node(j)).unwrap();
            let z = (c - want) / se;
            assert!(z.abs() < 4.0, "cov z {z} at ({i},{j})");
        }
    }

    #[test]
    fn cholesky_two_by_two_factorization() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let spec = KernelSpec::<f64>::fbm(0.7, 1.0).unwrap();
        let batch = cholesky_sample(&spec, grid, RngConfig::new(9), 4).unwrap();
        let r11 = spec.covariance(0.5, 0.5).unwrap();
        let r12 = spec.covariance(0.5, 1.0).unwrap();
        let r22 = spec.covariance(1.0, 1.0).unwrap();
        for p in 0..4 {
            let mut rng = RngConfig::new(9).path_rng(p as u64);
            let z1: f64 = standard_normal(&mut rng);
            let z2: f64 = standard_normal(&mut rng);
            let path = batch.path(p);
            assert_relative_eq!(path[1], r11.sqrt() * z1, epsilon = 1e-12);
            let l21 = r12 / r11.sqrt();
            let l22 = (r22 - l21 * l21).sqrt();
            assert_relative_eq!(path[2], l21 * z1 + l22 * z2, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_node_variances() {
        let grid = grid64();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let batch = cholesky_sample(&spec, grid, RngConfig::new(21), 40_000).unwrap();
        for &i in &[8usize, 32, 64] {
            let col = batch.column(i);
            let (var, se) = crate::report::variance_with_stderr(&col).unwrap();
            let want = spec.covariance(grid.node(i), grid.node(i)).unwrap();
            let z = (var - want) / se;
            assert!(z.abs() < 4.0, "var z {z} at node {i}");
        }
    }

    #[test]
    fn two_samplers_agree_in_law() {
        // identity kernel: both samplers must produce the Brownian node law;
        // compare mean, variance and E|X| of B_T across batches.
        let grid = grid64();
        let spec = KernelSpec::identity(1.0);
        let a = volterra_transform(&spec, &sample_brownian(grid, RngConfig::new(31), 40_000)).unwrap();
        let b = cholesky_sample(&spec, grid, RngConfig::new(32), 40_000).unwrap();
        let xa = a.column(64);
        let xb = b.column(64);
        for f in [
            (|x: f64| x) as fn(f64) -> f64,
            |x: f64| x * x,
            |x: f64| x.abs(),
        ] {
            let sa: Vec<f64> = xa.iter().map(|&x| f(x)).collect();
            let sb: Vec<f64> = xb.iter().map(|&x| f(x)).collect();
            let ea = MCEstimate::from_samples(&sa).unwrap();
            let eb = MCEstimate::from_samples(&sb).unwrap();
            let z = (ea.mean - eb.mean) / (ea.stderr.powi(2) + eb.stderr.powi(2)).sqrt();
            assert!(z.abs() < 4.0, "two-sample z {z}");
        }
    }

    #[test]
    fn gaussianity_of_linear_functionals() {
        // skewness/kurtosis z-tests of a fixed linear functional
        let grid = grid64();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let fg = volterra_transform(&spec, &sample_brownian(grid, RngConfig::new(77), 100_000)).unwrap();
        let vals: Vec<f64> = fg.map_paths(|row| row[16] - 0.5 * row[48] + 2.0 * row[64]);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2) - 3.0;
        let z_skew = skew / (6.0 / n).sqrt();
        let z_kurt = kurt / (24.0 / n).sqrt();
        assert!(z_skew.abs() < 4.0, "skew z {z_skew}");
        assert!(z_kurt.abs() < 4.0, "kurt z {z_kurt}");
    }

    #[test]
    fn cameron_martin_shift_examples() {
        let grid = grid64();
        let id = KernelSpec::identity(1.0);
        let hdot = GridFunction::cells(grid, vec![1.0; 64]);
        let hf = cameron_martin_shift(&id, &hdot).unwrap();
        for i in 0..=64 {
            assert_relative_eq!(hf.values[i], grid.node(i), epsilon = 1e-13);
        }
        assert_relative_eq!(hdot.l2_norm_sq(), 1.0, epsilon = 1e-13);
        // zero shift
        let z = GridFunction::cells(grid, vec![0.0; 64]);
        let hz = cameron_martin_shift(&id, &z).unwrap();
        assert!(hz.values.iter().all(|v| *v == 0.0));
        // RL alpha = 0.5: h^F(t) = int_0^t F(t,s) ds, nested-quadrature reference
        let rl = KernelSpec::riemann_liouville(0.5, crate::kernels::SmoothFn::one(), crate::kernels::SmoothFn::one(), 1.0).unwrap();
        let hf = cameron_martin_shift(&rl, &hdot).unwrap();
        // int_0^t (t-s)^{1/2} ds / Gamma(3/2) = t^{3/2} / (1.5 Gamma(1.5))
        for &i in &[32usize, 64] {
            let t = grid.node(i);
            let want = t.powf(1.5) / (1.5 * crate::special::gamma(1.5));
            assert_relative_eq!(hf.values[i], want, max_relative = 1e-9);
        }
    }

    #[test]
    fn bf_integral_examples() {
        let grid = grid64();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let bm = sample_brownian(grid, RngConfig::new(13), 64);
        let fg = volterra_transform(&spec, &bm).unwrap();
        let zero = GridFunction::cells(grid, vec![0.0; 64]);
        assert!(bf_integral(&zero, &fg).unwrap().iter().all(|v| *v == 0.0));
        let one = GridFunction::cells(grid, vec![1.0; 64]);
        let vals = bf_integral(&one, &fg).unwrap();
        for p in 0..64 {
            assert_relative_eq!(vals[p], fg.path(p)[64], epsilon = 1e-12);
        }
    }

    #[test]
    fn bf_integral_routes_agree_for_identity() {
        let grid = grid64();
        let spec = KernelSpec::identity(1.0);
        let bm = sample_brownian(grid, RngConfig::new(17), 128);
        let fg = volterra_transform(&spec, &bm).unwrap();
        let psi = GridFunction::cells_from_fn(grid, |s| (2.0 * s).cos());
        let a = bf_integral(&psi, &fg).unwrap();
        let b = bf_integral_via_brownian(&spec, &psi, &bm).unwrap();
        for p in 0..128 {
            assert_relative_eq!(a[p], b[p], epsilon = 1e-12);
        }
    }

    #[test]
    fn bf_integral_isometry() {
        let grid = grid64();
        let spec = KernelSpec::fbm(0.7, 1.0).unwrap();
        let bm = sample_brownian(grid, RngConfig::new(19), 40_000);
        let psi = GridFunction::cells_from_fn(grid, |s| 1.0 + s);
        let kstar = build_kf_star(&spec, &grid).unwrap();
        let kpsi = kstar.apply(&psi).unwrap();
        let vals = brownian_integral(&kpsi, &bm).unwrap();
        let (var, se) = crate::report::variance_with_stderr(&vals).unwrap();
        let want = kpsi.l2_norm_sq();
        let z = (var - want) / se;
        assert!(z.abs() < 4.0, "isometry z {z}");
    }

    #[test]
    fn coarsening_sums_increments() {
        let grid = grid64();
        let bm = sample_brownian(grid, RngConfig::new(23), 4);
        let coarse = coarsen_brownian(&bm, 4).unwrap();
        assert_eq!(coarse.grid.n(), 16);
        for p in 0..4 {
            let fine = bm.path(p);
            let c = coarse.path(p);
            for k in 0..16 {
                let want: f64 = fine[4 * k..4 * k + 4].iter().sum();
                assert_relative_eq!(c[k], want, epsilon = 1e-14);
            }
        }
    }
}
