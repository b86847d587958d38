//! Attention-head importance, pruning and transfer analysis on desk-scale
//! Transformer encoders.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors and a tape-based reverse-mode autodiff engine.
//! - [`transformer`]: gated multi-head encoder with parameter sharing and freezing.
//! - [`tasks`]: synthetic corpora, text ingestion, masked-LM pre-training,
//!   classification fine-tuning and evaluation metrics.
//! - [`importance`]: gate-gradient head importance, normalization and pruning sweeps.
//! - [`analysis`]: head-set recall, attention divergence, feature distance,
//!   correlation and layer-freezing comparison.
//! - [`io`]: checkpoints, CSV schemas, SVG charts and run manifests.
//! - [`cli`]: the `headlab` command pipeline.

pub mod tensor;
pub mod transformer;
pub mod tasks;
pub mod importance;
pub mod analysis;
pub mod io;
pub mod cli;
