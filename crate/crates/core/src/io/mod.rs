//! Checkpoints, CSV artifacts, SVG charts and run manifests.

pub mod checkpoint;
pub mod manifest;
pub mod svg;
pub mod tables;

pub use checkpoint::{Checkpoint, Provenance};
pub use manifest::{read_json, sha256_file, write_json, Manifest};

use std::path::Path;

use thiserror::Error;

use crate::tensor::TensorError;
use crate::transformer::ModelError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("invalid file: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl IoError {
    pub fn at(path: &Path, e: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
