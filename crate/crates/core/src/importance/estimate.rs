use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImportanceError;
use crate::tasks::data::{mask_tokens, Batch, Dataset, Example, TaskKind};
use crate::tasks::train::{batch_loss, CHUNK};
use crate::tensor::{Element, Tape, Tensor};
use crate::transformer::{ForwardOptions, HeadId, Transformer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    L1,
    L2,
    None,
}

impl NormMode {
    pub const ALL: [NormMode; 3] = [NormMode::L1, NormMode::L2, NormMode::None];

    pub fn name(self) -> &'static str {
        match self {
            NormMode::L1 => "l1",
            NormMode::L2 => "l2",
            NormMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceOptions {
    pub batch_size: usize,
    /// Cap on training examples used; `None` uses the whole split.
    pub max_examples: Option<usize>,
    pub seed: u64,
    pub p_mask: f64,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_examples: None,
            seed: 0,
            p_mask: 0.15,
        }
    }
}

/// `∂L/∂ξ` for every (layer, head) from one backward pass, `L × H`.
///
/// `L` is the mean task loss over the batch's targets. Parameters are bound
/// as constants, so the model is untouched; masked heads are reported too
/// (their gradient is taken at ξ = 0).
pub fn gate_gradients<E: Element>(model: &Transformer<E>, batch: &Batch) -> Result<Tensor<E>, ImportanceError> {
    let (l, h) = (model.config.n_layers, model.config.n_heads);
    let denom = batch.n_targets() as f64;
    if denom == 0.0 {
        return Err(ImportanceError::Contract("batch has no targets".into()));
    }
    let starts: Vec<usize> = (0..batch.batch_size()).step_by(CHUNK).collect();
    let parts: Vec<Vec<E>> = starts
        .into_par_iter()
        .map(|s| {
            let sub = batch.slice(s, CHUNK.min(batch.batch_size() - s));
            if sub.n_targets() == 0 {
                return Ok(vec![E::zero(); l * h]);
            }
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, false);
            let opts = ForwardOptions {
                gate_grad: true,
                ..ForwardOptions::default()
            };
            let (loss, out) = batch_loss(model, &mut tape, &vars, &sub, opts, denom)?;
            let gates = out.gates.expect("gated forward");
            let grads = tape.backward(loss)?;
            Ok(grads.get(gates).expect("gate leaf is differentiable").into_data())
        })
        .collect::<Result<_, ImportanceError>>()?;
    let mut total = vec![E::zero(); l * h];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(t, g)| *t += g);
    }
    Ok(Tensor::new([l, h], total)?)
}

/// Importance batches over `examples`: masked-LM corpora are masked once
/// with `opts.seed`, then chunked in order.
pub fn importance_batches(
    data: &Dataset,
    examples: &[Example],
    vocab_size: usize,
    opts: &ImportanceOptions,
) -> Result<Vec<Batch>, ImportanceError> {
    if examples.is_empty() {
        return Err(ImportanceError::Contract("importance needs a non-empty dataset".into()));
    }
    if opts.batch_size == 0 {
        return Err(ImportanceError::Config("importance batch_size must be positive".into()));
    }
    match data.spec.kind {
        TaskKind::MaskedLm => {
            let all = mask_tokens(examples, vocab_size, opts.p_mask, opts.seed)?;
            Ok((0..examples.len())
                .step_by(opts.batch_size)
                .map(|s| all.slice(s, opts.batch_size.min(examples.len() - s)))
                .filter(|b| b.n_targets() > 0)
                .collect())
        }
        TaskKind::Classification { .. } => examples
            .chunks(opts.batch_size)
            .map(|c| Batch::classification(c).map_err(Into::into))
            .collect(),
    }
}

/// Raw and normalized head importance.
///
/// Unshared tables have one row per layer; shared tables a single row indexed
/// by head alone (reported as layer 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub n_rows: usize,
    pub n_heads: usize,
    pub shared: bool,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub norm_mode: NormMode,
    /// Whether each entry is a live (unmasked) head.
    pub live: Vec<bool>,
    /// Rows whose live entries are all zero; left unnormalized.
    pub zero_rows: Vec<usize>,
    pub n_examples: usize,
    pub batch_size: usize,
    pub n_batches: usize,
}

impl ImportanceTable {
    /// Table with `normalized == raw`, every entry live.
    pub fn from_raw(n_rows: usize, n_heads: usize, shared: bool, raw: Vec<f64>) -> Result<Self, ImportanceError> {
        if raw.len() != n_rows * n_heads {
            return Err(ImportanceError::Contract(format!(
                "{} scores for a {n_rows}x{n_heads} table",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !(*v >= 0.0)) {
            return Err(ImportanceError::Contract("importance scores must be non-negative".into()));
        }
        Ok(Self {
            n_rows,
            n_heads,
            shared,
            normalized: raw.clone(),
            live: vec![true; raw.len()],
            raw,
            norm_mode: NormMode::None,
            zero_rows: Vec::new(),
            n_examples: 0,
            batch_size: 0,
            n_batches: 0,
        })
    }

    pub fn heads(&self) -> Vec<HeadId> {
        (0..self.n_rows)
            .flat_map(|l| (0..self.n_heads).map(move |h| HeadId::new(l, h)))
            .collect()
    }

    fn index(&self, id: HeadId) -> usize {
        assert!(id.layer < self.n_rows && id.head < self.n_heads, "head {id} outside table");
        id.layer * self.n_heads + id.head
    }

    pub fn raw_at(&self, id: HeadId) -> f64 {
        self.raw[self.index(id)]
    }

    pub fn normalized_at(&self, id: HeadId) -> f64 {
        self.normalized[self.index(id)]
    }

    pub fn is_live(&self, id: HeadId) -> bool {
        self.live[self.index(id)]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.normalized[r * self.n_heads..(r + 1) * self.n_heads]
    }

    pub fn raw_row(&self, r: usize) -> &[f64] {
        &self.raw[r * self.n_heads..(r + 1) * self.n_heads]
    }
}

/// Live-head flags in table layout: under sharing a head counts as live while
/// any layer still uses it.
pub fn table_live(model: &Transformer, shared: bool) -> Vec<bool> {
    let g = &model.gates;
    if !shared {
        return g.mask_bits().to_vec();
    }
    (0..g.n_heads())
        .map(|h| (0..g.n_layers()).any(|l| g.is_live(HeadId::new(l, h))))
        .collect()
}

/// Expected absolute gate gradient over the (optionally subsampled) train
/// split, the expectation taken as the mean over fixed-size batches.
///
/// With `shared` the layer gradients of each head are summed before the
/// absolute value. The result is normalized with `NormMode::None`.
pub fn estimate_importance(
    model: &Transformer,
    data: &Dataset,
    shared: bool,
    opts: &ImportanceOptions,
) -> Result<ImportanceTable, ImportanceError> {
    let examples = Dataset::subsample(&data.train, opts.max_examples, opts.seed);
    let batches = importance_batches(data, &examples, model.config.vocab_size, opts)?;
    let (l, h) = (model.config.n_layers, model.config.n_heads);
    let n_rows = if shared { 1 } else { l };
    let per_batch: Vec<Vec<f64>> = batches
        .par_iter()
        .map(|b| {
            let g = gate_gradients(model, b)?.to_f64_vec();
            Ok(if shared {
                (0..h).map(|j| (0..l).map(|i| g[i * h + j]).sum::<f64>().abs()).collect()
            } else {
                g.into_iter().map(f64::abs).collect()
            })
        })
        .collect::<Result<_, ImportanceError>>()?;
    let mut raw = vec![0.0; n_rows * h];
    for b in &per_batch {
        raw.iter_mut().zip(b).for_each(|(r, v)| *r += v);
    }
    let n = per_batch.len() as f64;
    raw.iter_mut().for_each(|r| *r /= n);
    let mut table = ImportanceTable::from_raw(n_rows, h, shared, raw)?;
    table.live = table_live(model, shared);
    table.n_examples = examples.len();
    table.batch_size = opts.batch_size;
    table.n_batches = per_batch.len();
    Ok(table)
}

/// Rescales each row by its l1 or l2 norm over live entries. Masked entries
/// normalize to 0; all-zero rows pass through unchanged and are flagged.
pub fn normalize_importance(table: &ImportanceTable, mode: NormMode) -> ImportanceTable {
    let mut out = table.clone();
    out.norm_mode = mode;
    out.zero_rows.clear();
    let h = table.n_heads;
    for r in 0..table.n_rows {
        let raw = table.raw_row(r);
        let live = &table.live[r * h..(r + 1) * h];
        let norm = match mode {
            NormMode::L1 => raw.iter().zip(live).filter(|p| *p.1).map(|p| p.0.abs()).sum::<f64>(),
            NormMode::L2 => raw.iter().zip(live).filter(|p| *p.1).map(|p| p.0 * p.0).sum::<f64>().sqrt(),
            NormMode::None => 1.0,
        };
        let dst = &mut out.normalized[r * h..(r + 1) * h];
        if norm == 0.0 {
            out.zero_rows.push(r);
            dst.copy_from_slice(raw);
            continue;
        }
        for ((d, &v), &l) in dst.iter_mut().zip(raw).zip(live) {
            *d = if l || mode == NormMode::None { v / norm } else { 0.0 };
        }
    }
    out
}

/// Heads in ascending normalized importance; ties by (layer, head).
pub fn rank_heads(table: &ImportanceTable) -> Vec<HeadId> {
    let mut heads = table.heads();
    heads.sort_by(|a, b| {
        table
            .normalized_at(*a)
            .total_cmp(&table.normalized_at(*b))
            .then(a.cmp(b))
    });
    heads
}
