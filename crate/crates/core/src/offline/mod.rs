//! Estimation from logged trajectories: the dataset format, the history
//! features, per-arm ridge regression with its `zhat` index, double ML, and
//! a synthetic population generator with known ground truth.

mod dataset;
mod dml;
mod features;
mod ridge;
pub mod synthetic;

use thiserror::Error;

pub use dataset::{LoggedDataset, PatientRecord};
pub use dml::{
    fit_double_ml, fit_double_ml_logged, BaseRegressor, DoubleMlConfig, DoubleMlModel, FittedRegressor, Regressor,
    RidgeRegressor,
};
pub use features::{featurize, future_verification_rate, FeatureVector, HISTORY_DIM, HISTORY_FEATURE_NAMES, WARMUP_DAYS};
pub use ridge::{
    arm_normal_equations, fit_ridge, regression_samples, ridge_solve, zhat, NormalEquations, RidgeModel, Sample,
    Target,
};

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("record {id}: {reason}")]
    InvalidRecord { id: usize, reason: String },

    #[error("record {id}: day {t} outside enrollment window [{start}, {end}]")]
    OutsideWindow { id: usize, t: usize, start: usize, end: usize },

    #[error("record {id}: day {t} is within the {warmup}-day warm-up after start {start}")]
    InsufficientWarmup { id: usize, t: usize, start: usize, warmup: usize },

    #[error("record {id}: no future days after {t}")]
    UndefinedLabel { id: usize, t: usize },

    #[error("no samples with action {0}; cannot fit that arm")]
    EmptyArm(u8),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fold {fold} has only one treatment value in its training part")]
    DegeneratePropensity { fold: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear system is singular")]
    Singular,
}
