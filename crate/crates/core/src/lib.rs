//! Differentially private ordinary least squares with stability-based
//! outlier filtering.
//!
//! The estimator runs a leverage filter, a residual filter, a
//! propose-test-release gate on the resulting stability scores, and finally
//! releases a Gaussian-perturbed coefficient vector shaped by the filtered
//! covariance.

pub mod datagen;
pub mod dp;
pub mod error;
pub mod issp;
pub mod leverage;
pub mod linalg;
pub mod residual;
pub mod sigma;

pub use datagen::{generate, make_adjacent, AdjacentMode, AdjacentPair, CovariateFamily, ModelSpec};
pub use dp::{ptr_check, sample_shaped_gaussian, stable_histogram, Bin, PrivacyParams, PtrVerdict, RngStream};
pub use error::{Error, Result};
pub use issp::{derived_constants, issp_fit, IsspConfig, IsspOutput, Outcome};
pub use leverage::{stable_leverage_filtering, LeverageFilterOutcome};
pub use linalg::{
    check_goodness, downdate_remove_point, psd_distance, weighted_ols, Dataset, GoodnessParams,
    GoodnessReport, RegressionState, WeightVector,
};
pub use residual::{
    residual_thresholding, stable_residual_filtering, stable_residual_filtering_fast, ResidualFilterOutcome,
};
pub use sigma::{estimate_sigma_squared, SigmaConfig, SigmaOutcome};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
