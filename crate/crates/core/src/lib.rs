//! F-Gaussian (Volterra) processes and their stochastic-calculus toolkit:
//! kernel operators and inverses on a uniform grid, Girsanov reweighting,
//! gradient/entropy machinery with log-Sobolev gates, a martingale
//! construction, and derivative-free Greeks for rough-volatility payoffs.
//!
//! The numerical core is generic over the scalar type (any IEEE float via
//! [`scalar::Scalar`]); `f64` aliases for the main types live at the crate
//! root and are what the CLI and the acceptance suite use.

pub mod error;
pub mod expr;
pub mod finance;
pub mod functionals;
pub mod girsanov;
pub mod grid_ops;
pub mod kernels;
pub mod linalg;
pub mod martingale;
pub mod quad;
pub mod report;
pub mod sampling;
pub mod scalar;
pub mod special;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{FgError, Result};

/// Concrete `f64` aliases for the main types.
pub type KernelSpec64 = kernels::KernelSpec<f64>;
pub type SmoothFn64 = kernels::SmoothFn<f64>;
pub type InversionData64 = kernels::InversionData<f64>;
pub type TimeGrid64 = grid_ops::TimeGrid<f64>;
pub type GridFunction64 = grid_ops::GridFunction<f64>;
pub type TriangularOperator64 = grid_ops::TriangularOperator<f64>;
pub type PathBatch64 = sampling::PathBatch<f64>;
pub type ShiftDirection64 = girsanov::ShiftDirection<f64>;
pub type CylinderFunctional64 = functionals::CylinderFunctional<f64>;
pub type CylinderFunctionalL264 = functionals::CylinderFunctionalL2<f64>;
pub type MarketParams64 = finance::MarketParams<f64>;
pub type PayoffSpec64 = finance::PayoffSpec<f64>;
pub type MCEstimate64 = report::MCEstimate<f64>;
