use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, CLS, MASK, N_RESERVED, PAD, UNK};
use super::TaskError;
use crate::transformer::TokenBatch;

/// One tokenized sequence, `[CLS]` first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    /// Class id for classification data; `None` for masked-LM text.
    pub label: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mcc,
    Accuracy,
    AvgAccF1,
    RecallAt1,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mcc => "mcc",
            MetricKind::Accuracy => "accuracy",
            MetricKind::AvgAccF1 => "avg_acc_f1",
            MetricKind::RecallAt1 => "recall_at_1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Mcc, Self::Accuracy, Self::AvgAccF1, Self::RecallAt1]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    MaskedLm,
    Classification { n_classes: usize },
}

/// Kind of task plus the metric it is scored with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub metric: MetricKind,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, kind: TaskKind, metric: MetricKind) -> Result<Self, TaskError> {
        let spec = Self {
            name: name.into(),
            kind,
            metric,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn masked_lm(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::MaskedLm,
            metric: MetricKind::RecallAt1,
        }
    }

    /// Recall@1 is the metric of masked-LM and only of masked-LM; MCC and
    /// Avg Acc & F1 need binary labels.
    pub fn validate(&self) -> Result<(), TaskError> {
        match (self.kind, self.metric) {
            (TaskKind::MaskedLm, MetricKind::RecallAt1) => Ok(()),
            (TaskKind::MaskedLm, m) | (TaskKind::Classification { .. }, m @ MetricKind::RecallAt1) => {
                Err(TaskError::Config(format!(
                    "metric {} is not valid for task {}",
                    m.name(),
                    self.name
                )))
            }
            (TaskKind::Classification { n_classes }, _) if n_classes < 2 => Err(TaskError::Config(
                format!("task {} needs at least two classes", self.name),
            )),
            (TaskKind::Classification { n_classes }, MetricKind::Mcc | MetricKind::AvgAccF1) if n_classes != 2 => {
                Err(TaskError::Config(format!(
                    "metric {} requires binary labels (task {})",
                    self.metric.name(),
                    self.name
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.kind {
            TaskKind::Classification { n_classes } => Some(n_classes),
            TaskKind::MaskedLm => None,
        }
    }
}

/// Immutable train/dev examples of one task over a shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

impl Dataset {
    pub fn max_len(&self) -> usize {
        self.train
            .iter()
            .chain(&self.dev)
            .map(|e| e.tokens.len())
            .max()
            .unwrap_or(0)
    }

    /// Deterministic subsample of at most `n` examples from `split`.
    pub fn subsample(split: &[Example], n: Option<usize>, seed: u64) -> Vec<Example> {
        match n {
            Some(n) if n < split.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = rand::seq::index::sample(&mut rng, split.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| split[i].clone()).collect()
            }
            _ => split.to_vec(),
        }
    }
}

/// Supervision attached to a [`TokenBatch`].
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    /// Target id at masked positions, `batch × seq` row-major.
    Masked(Vec<Option<usize>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: TokenBatch,
    pub labels: Labels,
}

impl Batch {
    pub fn classification(examples: &[Example]) -> Result<Self, TaskError> {
        let labels = examples
            .iter()
            .map(|e| e.label.ok_or_else(|| TaskError::Contract("unlabeled example".into())))
            .collect::<Result<_, _>>()?;
        let seqs: Vec<&[u32]> = examples.iter().map(|e| e.tokens.as_slice()).collect();
        Ok(Self {
            tokens: TokenBatch::from_sequences(&seqs),
            labels: Labels::Classes(labels),
        })
    }

    /// Number of supervised targets (examples or masked positions).
    pub fn n_targets(&self) -> usize {
        match &self.labels {
            Labels::Classes(c) => c.len(),
            Labels::Masked(t) => t.iter().filter(|t| t.is_some()).count(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.batch_size()
    }

    /// Examples `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Batch {
        let s = self.tokens.seq_len;
        Batch {
            tokens: self.tokens.slice(start, len),
            labels: match &self.labels {
                Labels::Classes(c) => Labels::Classes(c[start..start + len].to_vec()),
                Labels::Masked(t) => Labels::Masked(t[start * s..(start + len) * s].to_vec()),
            },
        }
    }
}

/// Masked-LM corruption: every position other than PAD/CLS/MASK/UNK is chosen
/// independently with probability `p_mask`; chosen positions become `[MASK]`
/// 80% of the time, a random content token 10%, and stay unchanged 10%.
/// Targets are recorded for every chosen position.
pub fn mask_tokens(examples: &[Example], vocab_size: usize, p_mask: f64, seed: u64) -> Result<Batch, TaskError> {
    if !(p_mask > 0.0 && p_mask < 1.0) {
        return Err(TaskError::Config(format!("p_mask must be in (0, 1), got {p_mask}")));
    }
    if vocab_size <= N_RESERVED {
        return Err(TaskError::Config("vocabulary has no content tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<&[u32]> = examples.iter().map(|e| e.tokens.as_slice()).collect();
    let mut tokens = TokenBatch::from_sequences(&seqs);
    let mut targets = vec![None; tokens.ids.len()];
    for (slot, target) in tokens.ids.iter_mut().zip(targets.iter_mut()) {
        let id = *slot as u32;
        if matches!(id, PAD | CLS | MASK | UNK) {
            continue;
        }
        if rng.random::<f64>() >= p_mask {
            continue;
        }
        *target = Some(id as usize);
        let r: f64 = rng.random();
        if r < 0.8 {
            *slot = MASK as usize;
        } else if r < 0.9 {
            *slot = rng.random_range(N_RESERVED..vocab_size);
        }
    }
    Ok(Batch {
        tokens,
        labels: Labels::Masked(targets),
    })
}

/// Shuffled minibatch index order for one epoch-free sampling step.
pub fn sample_indices(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..batch.min(n)).map(|_| rng.random_range(0..n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize, len: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                tokens: std::iter::once(CLS)
                    .chain((1..len).map(|j| (N_RESERVED + (i + j) % 10) as u32))
                    .collect(),
                label: None,
            })
            .collect()
    }

    #[test]
    fn metric_must_fit_task_kind() {
        assert!(TaskSpec::new("mlm", TaskKind::MaskedLm, MetricKind::Accuracy).is_err());
        assert!(TaskSpec::new("c", TaskKind::Classification { n_classes: 2 }, MetricKind::RecallAt1).is_err());
        assert!(TaskSpec::new("c", TaskKind::Classification { n_classes: 3 }, MetricKind::Mcc).is_err());
        assert!(TaskSpec::new("c", TaskKind::Classification { n_classes: 3 }, MetricKind::Accuracy).is_ok());
        assert!(TaskSpec::masked_lm("mlm").validate().is_ok());
    }

    #[test]
    fn masking_rate_within_binomial_bound() {
        let ex = examples(400, 25);
        let b = mask_tokens(&ex, 20, 0.15, 7).unwrap();
        let eligible = (400 * 24) as f64;
        let masked = b.n_targets() as f64;
        let sigma = (eligible * 0.15 * 0.85).sqrt();
        assert!((masked - 0.15 * eligible).abs() < 3.0 * sigma, "masked {masked} of {eligible}");
    }

    #[test]
    fn pad_and_cls_never_masked() {
        let mut ex = examples(50, 12);
        ex.push(Example {
            tokens: vec![CLS, 5],
            label: None,
        });
        let b = mask_tokens(&ex, 20, 0.9, 3).unwrap();
        let Labels::Masked(t) = &b.labels else { panic!() };
        let s = b.tokens.seq_len;
        for (i, target) in t.iter().enumerate() {
            let (e, p) = (i / s, i % s);
            if p == 0 || !b.tokens.is_valid(e, p) {
                assert!(target.is_none());
                assert_ne!(b.tokens.ids[i], MASK as usize);
            }
        }
    }

    #[test]
    fn masking_is_seed_deterministic() {
        let ex = examples(20, 10);
        assert_eq!(mask_tokens(&ex, 20, 0.15, 11).unwrap(), mask_tokens(&ex, 20, 0.15, 11).unwrap());
        assert_ne!(mask_tokens(&ex, 20, 0.15, 11).unwrap(), mask_tokens(&ex, 20, 0.15, 12).unwrap());
    }

    #[test]
    fn masking_rejects_bad_probability() {
        let ex = examples(2, 4);
        assert!(mask_tokens(&ex, 20, 0.0, 1).is_err());
        assert!(mask_tokens(&ex, 20, 1.0, 1).is_err());
    }
}
