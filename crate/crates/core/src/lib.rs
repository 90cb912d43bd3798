//! Variable selection with the bag of little bootstraps (BLBVS).
//!
//! Predictors (or groups of predictors) are selected by majority vote across
//! many small weighted bootstrap resamples, and coefficient standard errors
//! are estimated by averaging subset-level dispersion. Conventional bootstrap
//! selection (BootVS) is provided as a baseline, together with a Monte Carlo
//! ground-truth oracle and the relative-deviation convergence metric.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix it to `f64`.

pub mod dataio;
pub mod design;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod fit;
pub mod grouplasso;
pub mod lasso;
pub mod model;
pub mod resample;
pub mod scalar;
pub mod simgen;
pub mod tuning;

pub use engine::{
    aggregate_votes, aggregate_xi, run_blbvs, run_bootvs, BlbvsConfig, BlbvsReport, LambdaMode,
    Method,
};
pub use error::{Error, Result};
pub use model::{
    standardize_columns, validate_dataset, Family, FitResult, GroupStructure, GroupedDataset,
    PenaltyConfig, PenaltyKind, Rescale, Standardization,
};
pub use scalar::Scalar;
pub use simgen::{generate, SimSpec};

pub type Dataset = GroupedDataset<f64>;
pub type Dataset32 = GroupedDataset<f32>;
pub type Fit = FitResult<f64>;
pub type Penalty = PenaltyConfig<f64>;
pub type Report = BlbvsReport<f64>;
pub type Report32 = BlbvsReport<f32>;
pub type Truth = diagnostics::GroundTruth<f64>;
