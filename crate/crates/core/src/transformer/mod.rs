//! Gated multi-head Transformer encoder.
//!
//! Every head's output contribution is multiplied by a scalar gate before the
//! residual add. Gates are 1 by default; pruning masks a head by forcing its
//! gate to 0, never by removing weights. With `share_params` a single block is
//! reused by every layer while gates stay per (layer, head).

mod config;
mod gates;
mod model;
mod params;

pub use config::ModelConfig;
pub use gates::{HeadGates, HeadId};
pub use model::{EncoderOutput, ForwardOptions, ForwardTrace, ParamGroup, TokenBatch, Transformer};
pub use params::{
    AttentionHeadParams, BlockParams, BlockVars, FeedForwardParams, HeadVars, LayerNormParams, Linear,
    ModelVars,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    Token { id: usize, vocab: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SeqLen { len: usize, max: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("cannot freeze {k} layers of a {layers}-layer model")]
    Freeze { k: usize, layers: usize },
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
