//! Tasks: vocabularies, datasets, synthetic corpora, metrics and training.

pub mod data;
pub mod metrics;
pub mod synth;
pub mod text;
pub mod train;
pub mod vocab;

pub use data::{mask_tokens, Batch, Dataset, Example, Labels, MetricKind, TaskKind, TaskSpec};
pub use metrics::{accuracy, avg_acc_f1, f1, mcc, recall_at_1, relative_performance, score};
pub use synth::{synth_corpus, CorpusSpec, GrammarSpec, SynthTask};
pub use train::{evaluate, finetune, pretrain, EvalOptions, FinetuneReport, PretrainReport, TrainConfig};
pub use vocab::Vocab;

use thiserror::Error;

use crate::tensor::TensorError;
use crate::transformer::ModelError;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("relative performance undefined for full-model metric {0}")]
    UndefinedRelative(f64),
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
