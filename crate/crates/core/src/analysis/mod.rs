//! Head-set recall across tasks, attention divergence, feature distance,
//! importance/divergence correlation and layer-freezing comparison.

pub mod compare;
pub mod correlation;
pub mod freeze;
pub mod recall;

pub use compare::{attention_divergence, feature_distance, js_divergence, DivergenceTable, LayerDistanceProfile};
pub use correlation::{importance_divergence_correlation, pearson, spearman, Correlation, ScatterPoint};
pub use freeze::{freeze_compare, FreezeComparison};
pub use recall::{head_set_at_performance, recall, recall_curve, HeadSet, RecallCurve, SelectedHeads};

use thiserror::Error;

use crate::tasks::TaskError;
use crate::transformer::ModelError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
