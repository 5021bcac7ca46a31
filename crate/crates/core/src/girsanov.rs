//! Girsanov densities, quasi-invariance checks and integration-by-parts
//! weights under Cameron-Martin shifts.
//!
//! The density is computed in the underlying-Brownian form
//! alpha = exp(int hdot dB - ||hdot||^2 / 2); the operator form routed
//! through (K_F*)^{-1} and the B^F-integral is provided as well, and the
//! two are cross-asserted in tests (their equality is the content of the
//! inverse-operator identity).

use serde::Serialize;

use crate::error::Result;
use crate::functionals::CylinderFunctional;
use crate::grid_ops::{build_kf_star_inv, GridFunction, TimeGrid};
use crate::kernels::KernelSpec;
use crate::report::MCEstimate;
use crate::sampling::{bf_integral, cameron_martin_shift, PathBatch};
use crate::scalar::Scalar;

/// A Cameron-Martin direction: the cell density hdot, its primitive h,
/// the image h^F = K_F hdot, and ||hdot||_{L2}^2.
#[derive(Debug, Clone)]
pub struct ShiftDirection<T> {
    pub hdot: GridFunction<T>,
    pub h: GridFunction<T>,
    pub h_f: GridFunction<T>,
    pub norm_h_sq: T,
}

impl<T: Scalar> ShiftDirection<T> {
    pub fn new(spec: &KernelSpec<T>, grid: TimeGrid<T>, hdot: GridFunction<T>) -> Result<Self> {
        let dt = grid.dt();
        let mut h = vec![T::zero(); grid.n() + 1];
        let mut acc = T::zero();
        for (i, v) in hdot.values.iter().enumerate() {
            acc = acc + *v * dt;
            h[i + 1] = acc;
        }
        let h_f = cameron_martin_shift(spec, &hdot)?;
        let norm_h_sq = hdot.values.iter().map(|v| v.sq()).sum::<T>() * dt;
        Ok(Self {
            hdot,
            h: GridFunction::nodes(grid, h),
            h_f,
            norm_h_sq,
        })
    }

    pub fn scaled(&self, eps: T) -> Self {
        let scale = |g: &GridFunction<T>| GridFunction {
            grid: g.grid,
            kind: g.kind,
            values: g.values.iter().map(|v| *v * eps).collect(),
        };
        Self {
            hdot: scale(&self.hdot),
            h: scale(&self.h),
            h_f: scale(&self.h_f),
            norm_h_sq: self.norm_h_sq * eps.sq(),
        }
    }
}

/// Per-path alpha = exp(sum hdot dB - ||hdot||^2/2) on a Brownian batch.
pub fn girsanov_density<T: Scalar>(shift: &ShiftDirection<T>, bm: &PathBatch<T>) -> Result<Vec<T>> {
    let w = ibp_weight(shift, bm)?;
    let half_norm = shift.norm_h_sq.half();
    Ok(w.into_iter().map(|x| (x - half_norm).exp()).collect())
}

/// Operator route: exp(int (K_F*)^{-1} hdot dB^F - ||hdot||^2/2) on the
/// F-Gaussian batch. Equal to [`girsanov_density`] up to discretization.
pub fn girsanov_density_operator_route<T: Scalar>(
    spec: &KernelSpec<T>,
    shift: &ShiftDirection<T>,
    fg: &PathBatch<T>,
) -> Result<Vec<T>> {
    let inv = build_kf_star_inv(spec, &fg.grid)?;
    let psi = inv.apply(&shift.hdot)?;
    let ints = bf_integral(&psi, fg)?;
    let half_norm = shift.norm_h_sq.half();
    Ok(ints.into_iter().map(|x| (x - half_norm).exp()).collect())
}

/// Per-path beta = sum hdot dB: the derivative of alpha_{eps h} at eps = 0.
pub fn ibp_weight<T: Scalar>(shift: &ShiftDirection<T>, bm: &PathBatch<T>) -> Result<Vec<T>> {
    crate::sampling::brownian_integral(&shift.hdot, bm)
}

/// Paired estimate of two sides of an identity under common random numbers.
#[derive(Debug, Clone, Serialize)]
pub struct PairedCheck<T> {
    pub lhs: MCEstimate<T>,
    pub rhs: MCEstimate<T>,
    /// z-score of the per-path difference (CRN variance reduction applies).
    pub z_diff: T,
    pub pass: bool,
}

fn paired<T: Scalar>(lhs: Vec<T>, rhs: Vec<T>, z_gate: T) -> Result<PairedCheck<T>> {
    let diffs: Vec<T> = lhs.iter().zip(rhs.iter()).map(|(a, b)| *a - *b).collect();
    let lhs = MCEstimate::from_samples(&lhs)?.guard_variance()?;
    let rhs = MCEstimate::from_samples(&rhs)?.guard_variance()?;
    let d = MCEstimate::from_samples(&diffs)?;
    let z = d.versus(T::zero()).z.unwrap_or_else(T::zero);
    Ok(PairedCheck {
        lhs,
        rhs,
        z_diff: z,
        pass: z.abs() < z_gate,
    })
}

/// Quasi-invariance: E[G(B^F + h^F)] against E[G(B^F) alpha] with common
/// random numbers (`fg` must be the transform of `bm`).
pub fn quasi_invariance_check<T: Scalar>(
    g: &CylinderFunctional<T>,
    shift: &ShiftDirection<T>,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    z_gate: T,
) -> Result<PairedCheck<T>> {
    let alpha = girsanov_density(shift, bm)?;
    let lhs: Vec<T> = fg.map_paths(|row| g.eval_shifted(row, &shift.h_f.values));
    let rhs: Vec<T> = fg
        .paths()
        .zip(alpha.iter())
        .map(|(row, a)| g.eval(row) * *a)
        .collect();
    paired(lhs, rhs, z_gate)
}

/// Integration by parts: E[D_{h^F} G] against E[G beta] with CRN.
pub fn ibp_check<T: Scalar>(
    g: &CylinderFunctional<T>,
    shift: &ShiftDirection<T>,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    z_gate: T,
) -> Result<PairedCheck<T>> {
    let beta = ibp_weight(shift, bm)?;
    let lhs: Vec<T> = fg.map_paths(|row| g.directional_derivative(row, &shift.h_f.values));
    let rhs: Vec<T> = fg
        .paths()
        .zip(beta.iter())
        .map(|(row, b)| g.eval(row) * *b)
        .collect();
    paired(lhs, rhs, z_gate)
}

/// Reweighted-law check: under alpha_{-eps h^F} the shifted process
/// B^F + eps h^F is again F-Gaussian; its weighted mean must vanish and the
/// weighted second moments must reproduce R_F.
#[derive(Debug, Clone, Serialize)]
pub struct ReweightedLawCheck<T> {
    pub mean_z: Vec<T>,
    pub cov_z: Vec<T>,
    pub pass: bool,
}

pub fn reweighted_law_check<T: Scalar>(
    spec: &KernelSpec<T>,
    shift: &ShiftDirection<T>,
    eps: T,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    nodes: &[usize],
    z_gate: T,
) -> Result<ReweightedLawCheck<T>> {
    let neg = shift.scaled(-eps);
    let alpha = girsanov_density(&neg, bm)?;
    let grid = fg.grid;
    let mut mean_z = Vec::new();
    let mut cov_z = Vec::new();
    for &i in nodes {
        let samples: Vec<T> = fg
            .paths()
            .zip(alpha.iter())
            .map(|(row, a)| (row[i] + eps * shift.h_f.values[i]) * *a)
            .collect();
        let est = MCEstimate::from_samples(&samples)?.versus(T::zero());
        mean_z.push(est.z.unwrap());
    }
    for w in nodes.windows(2) {
        let (i, j) = (w[0], w[1]);
        let want = spec.covariance(grid.node(i), grid.node(j))?;
        let samples: Vec<T> = fg
            .paths()
            .zip(alpha.iter())
            .map(|(row, a)| {
                (row[i] + eps * shift.h_f.values[i]) * (row[j] + eps * shift.h_f.values[j]) * *a
            })
            .collect();
        let est = MCEstimate::from_samples(&samples)?.versus(want);
        cov_z.push(est.z.unwrap());
    }
    let pass = mean_z
        .iter()
        .chain(cov_z.iter())
        .all(|z| z.abs() < z_gate);
    Ok(ReweightedLawCheck {
        mean_z,
        cov_z,
        pass,
    })
}
