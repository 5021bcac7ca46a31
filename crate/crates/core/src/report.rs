//! Monte Carlo estimates and small statistics helpers shared by the check
//! modules.

use serde::Serialize;

use crate::error::{FgError, Result};
use crate::scalar::Scalar;

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MCEstimate<T> {
    pub mean: T,
    pub stderr: T,
    pub n: usize,
    /// z-score against a reference value, when one was supplied.
    pub z: Option<T>,
}

impl<T: Scalar> MCEstimate<T> {
    pub fn from_samples(values: &[T]) -> Result<Self> {
        if values.len() < 2 {
            return Err(FgError::DegenerateInput(
                "need at least two samples".into(),
            ));
        }
        let n = values.len();
        let nf = T::of_usize(n);
        let mean = values.iter().copied().sum::<T>() / nf;
        let var = values.iter().map(|v| (*v - mean).sq()).sum::<T>() / (nf - T::one());
        Ok(Self {
            mean,
            stderr: (var / nf).sqrt(),
            n,
            z: None,
        })
    }

    /// Attach a z-score against `reference`.
    pub fn versus(mut self, reference: T) -> Self {
        let denom = if self.stderr > T::zero() {
            self.stderr
        } else {
            T::of(1e-300)
        };
        self.z = Some((self.mean - reference) / denom);
        self
    }

    /// Error out when the standard error dwarfs the scale of the mean.
    pub fn guard_variance(self) -> Result<Self> {
        if self.stderr > T::of(0.1) * (self.mean.abs() + T::one()) {
            return Err(FgError::VarianceBlowup {
                mean: self.mean.to_f64_lossy(),
                stderr: self.stderr.to_f64_lossy(),
            });
        }
        Ok(self)
    }
}

/// Sample variance (unbiased) with the standard error of the variance
/// estimator itself (via the fourth central moment).
pub fn variance_with_stderr<T: Scalar>(values: &[T]) -> Result<(T, T)> {
    if values.len() < 4 {
        return Err(FgError::DegenerateInput("need at least 4 samples".into()));
    }
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let m2 = values.iter().map(|v| (*v - mean).sq()).sum::<T>() / n;
    let m4 = values.iter().map(|v| (*v - mean).sq().sq()).sum::<T>() / n;
    let var = m2 * n / (n - T::one());
    let var_of_var = (m4 - m2.sq()) / n;
    Ok((var, var_of_var.max(T::zero()).sqrt()))
}

/// Mean of pairwise products minus product of means is not needed here;
/// the covariance estimator below reports stderr via the product samples.
pub fn covariance_with_stderr<T: Scalar>(x: &[T], y: &[T]) -> Result<(T, T)> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(FgError::DegenerateInput("mismatched samples".into()));
    }
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let prods: Vec<T> = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (*a - mx) * (*b - my))
        .collect();
    let c = prods.iter().copied().sum::<T>() / (n - T::one());
    let mp = prods.iter().copied().sum::<T>() / n;
    let vp = prods.iter().map(|p| (*p - mp).sq()).sum::<T>() / (n - T::one());
    Ok((c, (vp / n).sqrt()))
}

/// One named pass/fail case inside a machine-readable check report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckCase {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub cases: Vec<CheckCase>,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, cases: Vec<CheckCase>) -> Self {
        let pass = cases.iter().all(|c| c.pass);
        Self {
            check: check.into(),
            cases,
            pass,
        }
    }
}
