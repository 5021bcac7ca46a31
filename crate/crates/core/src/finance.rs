//! Pricing layer: Black-Scholes baseline, the exponential rough-variance
//! process, its Malliavin derivative, and derivative-free delta estimators.
//!
//! The v0-sensitivity carries two estimators side by side: the corrected
//! one with the 1/t normalization required by the integration-by-parts
//! pairing (the direction u(s) = 1/(t F(t,s)) reproduces int F u = 1 only
//! with the 1/t), and the literal unnormalized form. Both are reported so
//! the discrepancy is visible as data.

use serde::Serialize;

use crate::error::{FgError, Result};
use crate::grid_ops::{build_kf_star_inv, GridFunction};
use crate::kernels::{KernelSpec, Univar};
use crate::quad::integrate;
use crate::report::MCEstimate;
use crate::sampling::{bf_integral, PathBatch, PathKind};
use crate::scalar::Scalar;
use crate::special::norm_cdf;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarketParams<T> {
    /// Initial level (spot S0, or v0 for the variance payoffs).
    pub spot: T,
    pub rate: T,
    pub sigma: T,
    pub strike: T,
    pub maturity: T,
}

impl<T: Scalar> MarketParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.spot <= T::zero()
            || self.sigma <= T::zero()
            || self.strike <= T::zero()
            || self.maturity <= T::zero()
        {
            return Err(FgError::Domain(
                "spot, sigma, strike and maturity must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub enum PayoffSpec<T> {
    Call { strike: T },
    Put { strike: T },
    Digital { strike: T },
    Custom(Univar<T>),
}

impl<T: Scalar> PayoffSpec<T> {
    pub fn eval(&self, x: T) -> T {
        match self {
            PayoffSpec::Call { strike } => (x - *strike).max(T::zero()),
            PayoffSpec::Put { strike } => (*strike - x).max(T::zero()),
            PayoffSpec::Digital { strike } => {
                if x > *strike {
                    T::one()
                } else {
                    T::zero()
                }
            }
            PayoffSpec::Custom(f) => f(x),
        }
    }

    pub fn custom(f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        PayoffSpec::Custom(Arc::new(f))
    }
}

impl<T: Scalar> std::fmt::Debug for PayoffSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PayoffSpec::Call { strike } => write!(f, "call(K={strike})"),
            PayoffSpec::Put { strike } => write!(f, "put(K={strike})"),
            PayoffSpec::Digital { strike } => write!(f, "digital(K={strike})"),
            PayoffSpec::Custom(_) => write!(f, "custom"),
        }
    }
}

/// European call in the standard discounting S0 N(d1) - K e^{-rT} N(d2).
pub fn black_scholes_call<T: Scalar>(p: &MarketParams<T>) -> Result<T> {
    p.validate()?;
    let vol = p.sigma * p.maturity.sqrt();
    let df = (-p.rate * p.maturity).exp();
    if vol < T::of(1e-12) {
        return Ok((p.spot - p.strike * df).max(T::zero()));
    }
    let d1 = ((p.spot / p.strike).ln() + (p.rate + p.sigma.sq().half()) * p.maturity) / vol;
    let d2 = d1 - vol;
    Ok(p.spot * norm_cdf(d1) - p.strike * df * norm_cdf(d2))
}

pub fn black_scholes_put<T: Scalar>(p: &MarketParams<T>) -> Result<T> {
    let call = black_scholes_call(p)?;
    let df = (-p.rate * p.maturity).exp();
    Ok(call - p.spot + p.strike * df)
}

/// Rough variance process v = v0 exp(B^F) on the batch nodes, with the
/// exponent clamped at +-700 (clamp events are counted).
#[derive(Debug, Clone)]
pub struct RoughVariance<T> {
    pub grid: crate::grid_ops::TimeGrid<T>,
    width: usize,
    values: Vec<T>,
    pub clamped: usize,
}

impl<T: Scalar> RoughVariance<T> {
    pub fn path(&self, p: usize) -> &[T] {
        &self.values[p * self.width..(p + 1) * self.width]
    }

    pub fn n_paths(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn column(&self, idx: usize) -> Vec<T> {
        (0..self.n_paths())
            .map(|p| self.values[p * self.width + idx])
            .collect()
    }
}

pub fn rough_variance_path<T: Scalar>(v0: T, fg: &PathBatch<T>) -> Result<RoughVariance<T>> {
    if v0 <= T::zero() {
        return Err(FgError::Domain("v0 must be positive".into()));
    }
    if fg.kind != PathKind::FGaussian {
        return Err(FgError::ConventionMismatch {
            expected: "F-Gaussian nodes",
            got: "Brownian increments",
        });
    }
    let width = fg.width();
    let cap = T::of(700.0);
    let per_path: Vec<(Vec<T>, usize)> = fg.map_paths(|row| {
        let mut clamped = 0usize;
        let vals = row
            .iter()
            .map(|x| {
                let mut e = *x;
                if e.abs() > cap {
                    clamped += 1;
                    e = e.signum() * cap;
                }
                v0 * e.exp()
            })
            .collect();
        (vals, clamped)
    });
    let mut values = Vec::with_capacity(per_path.len() * width);
    let mut clamped = 0;
    for (vals, c) in per_path {
        values.extend(vals);
        clamped += c;
    }
    Ok(RoughVariance {
        grid: fg.grid,
        width,
        values,
        clamped,
    })
}

/// D_s v_t = v_t F(t, s).
pub fn malliavin_deriv_v<T: Scalar>(spec: &KernelSpec<T>, v_t: T, t: T, s: T) -> Result<T> {
    Ok(v_t * spec.eval(t, s)?)
}

/// D_s (1/v_t) = -F(t, s) / v_t.
pub fn malliavin_deriv_recip_v<T: Scalar>(spec: &KernelSpec<T>, v_t: T, t: T, s: T) -> Result<T> {
    Ok(-spec.eval(t, s)? / v_t)
}

#[derive(Debug, Clone, Serialize)]
pub struct GreeksReport<T> {
    /// Headline estimator (collapsed weight route).
    pub estimate: MCEstimate<T>,
    /// Same estimator with the weight routed through (K_F*)^{-1} and the
    /// B^F-integral.
    pub operator_estimate: MCEstimate<T>,
    /// RMS of the per-path weight gap between the two routes.
    pub weight_route_rms: T,
    /// Central finite difference with common random numbers.
    pub fd: MCEstimate<T>,
    pub t0: T,
    pub oracle: Option<T>,
}

/// Sensitivity of E[g(x + B^F_T)] in x via the derivative-free weight:
/// estimator = (1/T0) E[g(x + B^F_T) W] with W = B_T (collapsed route) or
/// W = int (K_F*)^{-1} 1 dB^F (operator route).
pub fn bel_delta<T: Scalar>(
    spec: &KernelSpec<T>,
    payoff: &PayoffSpec<T>,
    x: T,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    oracle: Option<T>,
) -> Result<GreeksReport<T>> {
    let grid = fg.grid;
    let n = grid.n();
    let t_max = grid.horizon();
    let t0 = spec.cell_integral(t_max, T::zero(), t_max)?;
    if t0.abs() < T::of(1e-12) {
        return Err(FgError::DegenerateT0 {
            t0: t0.to_f64_lossy(),
        });
    }
    let w_collapsed: Vec<T> = bm.map_paths(|inc| inc.iter().copied().sum());
    let inv = build_kf_star_inv(spec, &grid)?;
    let ones = GridFunction::cells(grid, vec![T::one(); n]);
    let psi = inv.apply(&ones)?;
    let w_operator = bf_integral(&psi, fg)?;
    let rms = {
        let ms: T = w_collapsed
            .iter()
            .zip(w_operator.iter())
            .map(|(a, b)| (*a - *b).sq())
            .sum::<T>()
            / T::of_usize(w_collapsed.len());
        ms.sqrt()
    };
    let samples = |w: &[T]| -> Vec<T> {
        fg.paths()
            .zip(w.iter())
            .map(|(row, wi)| payoff.eval(x + row[n]) * *wi / t0)
            .collect()
    };
    let mut estimate = MCEstimate::from_samples(&samples(&w_collapsed))?.guard_variance()?;
    let mut operator_estimate = MCEstimate::from_samples(&samples(&w_operator))?;
    if let Some(o) = oracle {
        estimate = estimate.versus(o);
        operator_estimate = operator_estimate.versus(o);
    }
    // CRN central difference in x
    let bump = T::of(1e-3) * (T::one() + x.abs());
    let diffs: Vec<T> = fg.map_paths(|row| {
        (payoff.eval(x + bump + row[n]) - payoff.eval(x - bump + row[n])) / (T::of(2.0) * bump)
    });
    let fd = MCEstimate::from_samples(&diffs)?;
    Ok(GreeksReport {
        estimate,
        operator_estimate,
        weight_route_rms: rms,
        fd,
        t0,
        oracle,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BismutV0Report<T> {
    /// Corrected estimator (1/(v0 t)) E[f(v_t) W].
    pub corrected: MCEstimate<T>,
    /// Paper-literal estimator (1/v0) E[f(v_t) W].
    pub literal: MCEstimate<T>,
    /// literal / oracle, which isolates the missing normalization (about t).
    pub literal_deviation_factor: Option<T>,
    pub fd: MCEstimate<T>,
    pub oracle: Option<T>,
    pub t: T,
}

/// dP/dv0 for P(v0) = E[f(v0 exp(B^F_t))] via the reciprocal-kernel weight
/// W = int_0^t (cell average of 1/F(t, .)) dB.
pub fn bismut_v0_delta<T: Scalar>(
    spec: &KernelSpec<T>,
    payoff: &PayoffSpec<T>,
    v0: T,
    t_index: usize,
    bm: &PathBatch<T>,
    fg: &PathBatch<T>,
    oracle: Option<T>,
) -> Result<BismutV0Report<T>> {
    if v0 <= T::zero() {
        return Err(FgError::Domain("v0 must be positive".into()));
    }
    let grid = fg.grid;
    let t = grid.node(t_index);
    // precondition: int_0^t F(t,s)^{-2} ds must be finite
    if let Some(p) = spec.sing_diag() {
        if 2.0 * p >= 1.0 {
            return Err(FgError::NonIntegrableReciprocal);
        }
    }
    let sq_check = {
        let f = |s: T| {
            let v = spec.eval_raw(t, s);
            T::one() / (v * v)
        };
        let right = spec.sing_diag().map(|p| -2.0 * p).filter(|p| p.abs() > 1e-12);
        let left = spec.sing_left().map(|p| -2.0 * p).filter(|p| p.abs() > 1e-12);
        integrate(&f, T::zero(), t, left, right, spec.quad_opts())
    };
    match sq_check {
        Ok(v) if v.is_finite() => {}
        _ => return Err(FgError::NonIntegrableReciprocal),
    }
    // cell averages of 1/F(t, .)
    let dt = grid.dt();
    let mut recip = vec![T::zero(); t_index];
    for (c, slot) in recip.iter_mut().enumerate() {
        let a = grid.node(c);
        let b = grid.node(c + 1);
        let f = |s: T| T::one() / spec.eval_raw(t, s);
        let right = if c + 1 == t_index {
            spec.sing_diag().map(|p| -p).filter(|p| p.abs() > 1e-12)
        } else {
            None
        };
        let left = if c == 0 {
            spec.sing_left().map(|p| -p).filter(|p| p.abs() > 1e-12)
        } else {
            None
        };
        *slot = integrate(&f, a, b, left, right, spec.quad_opts())? / dt;
    }
    let weights: Vec<T> = bm.map_paths(|inc| {
        let mut acc = T::zero();
        for c in 0..t_index {
            acc = acc + recip[c] * inc[c];
        }
        acc
    });
    let v = rough_variance_path(v0, fg)?;
    let base: Vec<T> = (0..fg.n_paths())
        .map(|p| payoff.eval(v.path(p)[t_index]) * weights[p])
        .collect();
    let corrected_samples: Vec<T> = base.iter().map(|b| *b / (v0 * t)).collect();
    let literal_samples: Vec<T> = base.iter().map(|b| *b / v0).collect();
    let mut corrected = MCEstimate::from_samples(&corrected_samples)?.guard_variance()?;
    let mut literal = MCEstimate::from_samples(&literal_samples)?;
    if let Some(o) = oracle {
        corrected = corrected.versus(o);
        literal = literal.versus(o * t);
    }
    let bump = T::of(1e-4) * v0;
    let diffs: Vec<T> = fg.map_paths(|row| {
        let e = row[t_index].exp();
        (payoff.eval((v0 + bump) * e) - payoff.eval((v0 - bump) * e)) / (T::of(2.0) * bump)
    });
    let fd = MCEstimate::from_samples(&diffs)?;
    Ok(BismutV0Report {
        corrected,
        literal,
        literal_deviation_factor: oracle.map(|o| literal.mean / o),
        fd,
        oracle,
        t,
    })
}

/// CRN central difference of a per-path pricer.
pub fn fd_delta<T: Scalar>(
    price_paths: impl Fn(T) -> Vec<T>,
    x: T,
    bump: T,
) -> Result<MCEstimate<T>> {
    if bump <= T::zero() {
        return Err(FgError::Domain("bump must be positive".into()));
    }
    let up = price_paths(x + bump);
    let dn = price_paths(x - bump);
    let diffs: Vec<T> = up
        .iter()
        .zip(dn.iter())
        .map(|(a, b)| (*a - *b) / (T::of(2.0) * bump))
        .collect();
    MCEstimate::from_samples(&diffs)
}
