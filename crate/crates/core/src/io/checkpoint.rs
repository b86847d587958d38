//! Binary checkpoint container.
//!
//! Layout: magic `HPRN`, `u32` LE format version, `u64` LE metadata length,
//! UTF-8 JSON metadata, then every tensor as raw LE `f32` in directory order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::tasks::{TaskSpec, Vocab};
use crate::tensor::Tensor;
use crate::transformer::{HeadGates, ModelConfig, Transformer};

pub const MAGIC: &[u8; 4] = b"HPRN";
pub const VERSION: u32 = 1;

/// How a checkpoint was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// `pretrain`, `finetune` or `init`.
    pub stage: String,
    pub seed: u64,
    pub steps: usize,
    pub task: Option<TaskSpec>,
    /// sha256 of the checkpoint this one was fine-tuned from.
    pub parent: Option<String>,
    /// Dev metric at the end of training.
    pub dev_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: ModelConfig,
    vocab: Vocab,
    mlm_head: bool,
    n_classes: Option<usize>,
    frozen_layers: usize,
    gates: HeadGates,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Transformer,
    pub vocab: Vocab,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn new(model: Transformer, vocab: Vocab, provenance: Provenance) -> Self {
        Self {
            model,
            vocab,
            provenance,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = self.model.named_params();
        let mut offset = 0u64;
        let tensors = params
            .iter()
            .map(|(name, _, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.numel() as u64;
                e
            })
            .collect();
        let meta = Metadata {
            config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            mlm_head: self.model.mlm_head.is_some(),
            n_classes: self.model.n_classes(),
            frozen_layers: self.model.frozen_layers(),
            gates: self.model.gates.clone(),
            provenance: self.provenance.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        let bad = |m: &str| IoError::Format(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(IoError::Format(format!(
                "checkpoint format version {version} is not supported (expected {VERSION})"
            )));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta_end = 16usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: Metadata =
            serde_json::from_slice(&bytes[16..meta_end]).map_err(|e| IoError::Format(format!("metadata: {e}")))?;
        let payload = &bytes[meta_end..];
        if meta.vocab.len() != meta.config.vocab_size {
            return Err(bad("vocabulary size disagrees with model config"));
        }
        let mut model = Transformer::new(meta.config.clone(), 0)?;
        if meta.mlm_head {
            model.attach_mlm_head(0);
        }
        if let Some(n) = meta.n_classes {
            model.attach_classifier(n, 0);
        }
        {
            let mut params = model.named_params_mut();
            if params.len() != meta.tensors.len() {
                return Err(IoError::Format(format!(
                    "checkpoint lists {} tensors, model has {}",
                    meta.tensors.len(),
                    params.len()
                )));
            }
            let mut expected_offset = 0u64;
            for ((name, _, t), entry) in params.iter_mut().zip(&meta.tensors) {
                if *name != entry.name || t.shape() != entry.shape.as_slice() || entry.offset != expected_offset {
                    return Err(IoError::Format(format!("unexpected tensor entry {}", entry.name)));
                }
                let start = entry.offset as usize;
                let end = start + 4 * t.numel();
                let raw = payload.get(start..end).ok_or_else(|| bad("truncated tensor payload"))?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                **t = Tensor::new(entry.shape.clone(), data)?;
                expected_offset = end as u64;
            }
            if expected_offset as usize != payload.len() {
                return Err(bad("trailing bytes after tensor payload"));
            }
        }
        if (meta.gates.n_layers(), meta.gates.n_heads()) != (meta.config.n_layers, meta.config.n_heads) {
            return Err(bad("gate shape disagrees with model config"));
        }
        model.gates = meta.gates;
        model.freeze_layers(meta.frozen_layers)?;
        Ok(Self {
            model,
            vocab: meta.vocab,
            provenance: meta.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut f = std::fs::File::create(path).map_err(|e| IoError::at(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| IoError::at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::at(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            IoError::Format(m) => IoError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
