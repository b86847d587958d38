//! Gate-gradient head importance, normalization, ranking and pruning sweeps.

pub mod estimate;
pub mod sweep;

pub use estimate::{
    estimate_importance, gate_gradients, normalize_importance, rank_heads, ImportanceOptions, ImportanceTable,
    NormMode,
};
pub use sweep::{
    oracle_best_subset, planted_redundancy, prune_sweep, random_prunings, retain_top, EvalSettings, PruneStep,
    PruneTrajectory, SweepConfig, SweepMode,
};

use thiserror::Error;

use crate::tasks::TaskError;
use crate::tensor::TensorError;
use crate::transformer::ModelError;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
