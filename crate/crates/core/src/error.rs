use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum FgError {
    #[error("kernel value is not finite at (t={t}, s={s}): {reason}")]
    NonFinite { t: f64, s: f64, reason: String },

    #[error("quadrature did not converge on [{a}, {b}] at relative tolerance {rel_tol:e}")]
    QuadratureFailure { a: f64, b: f64, rel_tol: f64 },

    #[error("integrand is not integrable: {0}")]
    NonIntegrable(String),

    #[error("triangular operator is numerically singular at row {row} (pivot {pivot:e})")]
    SingularOperator { row: usize, pivot: f64 },

    #[error("grid function convention mismatch: operator expects {expected}, got {got}")]
    ConventionMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("covariance matrix is not positive semidefinite, even after jitter")]
    NotPsd,

    #[error("martingale reduction depends on t (relative spread {spread:e} > {tol:e})")]
    NotReducible { spread: f64, tol: f64 },

    #[error("Monte Carlo variance blow-up: stderr {stderr:e} against mean {mean:e}")]
    VarianceBlowup { mean: f64, stderr: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("kernel not supported by this operation: {0}")]
    UnsupportedKernel(String),

    #[error("normalizer T0 = int F(T,s) ds is degenerate ({t0:e})")]
    DegenerateT0 { t0: f64 },

    #[error("reciprocal kernel 1/F is not square integrable on [0, t]")]
    NonIntegrableReciprocal,

    #[error("kernel carries no inversion data and {0}")]
    MissingInversionData(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, FgError>;
