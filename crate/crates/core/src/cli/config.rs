use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::importance::{ImportanceOptions, NormMode, SweepConfig};
use crate::tasks::{GrammarSpec, MetricKind, SynthTask, TaskKind, TaskSpec, TrainConfig};
use crate::transformer::ModelConfig;

/// Encoder shape; the vocabulary size comes from the corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub share_params: bool,
}

impl Default for Geometry {
    fn default() -> Self {
        let c = ModelConfig::default();
        Self {
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_model: c.d_model,
            d_head: c.d_head,
            d_ff: c.d_ff,
            max_seq_len: c.max_seq_len,
            share_params: c.share_params,
        }
    }
}

impl Geometry {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_head: self.d_head,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            share_params: self.share_params,
        }
    }
}

/// Pre-training corpus: a whitespace-tokenized text file, or the synthetic
/// grammar when `text` is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub text: Option<PathBuf>,
    pub min_freq: usize,
    pub dev_every: usize,
    pub grammar: GrammarSpec,
    pub n_train: usize,
    pub n_dev: usize,
    /// Examples per synthetic downstream task.
    pub task_train: usize,
    pub task_dev: usize,
    /// Seed of all generated data; model seeds are separate.
    pub data_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            text: None,
            min_freq: 2,
            dev_every: crate::tasks::text::DEFAULT_DEV_EVERY,
            grammar: GrammarSpec::default(),
            n_train: 4000,
            n_dev: 300,
            task_train: 2000,
            task_dev: 300,
            data_seed: 1234,
        }
    }
}

/// A downstream task: synthetic by name, or a `label<TAB>text` file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub n_classes: Option<usize>,
    #[serde(default)]
    pub metric: Option<MetricKind>,
}

impl TaskSource {
    pub fn synthetic(task: SynthTask) -> Self {
        Self {
            name: task.name().into(),
            path: None,
            n_classes: None,
            metric: None,
        }
    }

    pub fn spec(&self) -> Result<TaskSpec, CliError> {
        match &self.path {
            None => SynthTask::parse(&self.name)
                .filter(|t| *t != SynthTask::MaskedLm)
                .map(SynthTask::spec)
                .ok_or_else(|| CliError::config(format!("unknown synthetic task {:?}", self.name))),
            Some(_) => {
                let n = self
                    .n_classes
                    .ok_or_else(|| CliError::config(format!("task {}: n_classes required for files", self.name)))?;
                let metric = self.metric.unwrap_or(MetricKind::Accuracy);
                Ok(TaskSpec::new(&self.name, TaskKind::Classification { n_classes: n }, metric)?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: Geometry,
    pub corpus: CorpusConfig,
    pub tasks: Vec<TaskSource>,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub seeds: Vec<u64>,
    pub importance: ImportanceOptions,
    pub sweep: SweepConfig,
    /// Norm modes swept by the walkthrough.
    pub sweep_norms: Vec<NormMode>,
    /// Layers frozen in the freezing comparison; `ceil(L/2)` when absent.
    pub freeze_layers: Option<usize>,
    /// Dev examples fed to both models when comparing.
    pub compare_examples: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut sweep = SweepConfig::default();
        sweep.importance = ImportanceOptions {
            max_examples: Some(96),
            ..ImportanceOptions::default()
        };
        sweep.eval.max_examples = Some(200);
        Self {
            model: Geometry::default(),
            corpus: CorpusConfig::default(),
            tasks: SynthTask::DOWNSTREAM.into_iter().map(TaskSource::synthetic).collect(),
            pretrain: TrainConfig {
                steps: 600,
                batch_size: 16,
                lr: 2e-3,
                eval_every: 200,
                eval_examples: Some(200),
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                steps: 200,
                batch_size: 16,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            seeds: (0..5).collect(),
            importance: ImportanceOptions {
                max_examples: Some(256),
                ..ImportanceOptions::default()
            },
            sweep,
            sweep_norms: NormMode::ALL.to_vec(),
            freeze_layers: None,
            compare_examples: Some(200),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn freeze_k(&self) -> usize {
        self.freeze_layers.unwrap_or(self.model.n_layers.div_ceil(2))
    }

    pub fn task(&self, name: &str) -> Result<&TaskSource, CliError> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CliError::config(format!("task {name:?} is not configured")))
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.model_config(8).validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must not be empty"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(CliError::config("seeds must be distinct"));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if !(self.sweep.step_fraction > 0.0 && self.sweep.step_fraction <= 1.0) {
            return Err(CliError::config("sweep.step_fraction must be in (0, 1]"));
        }
        if self.sweep_norms.is_empty() {
            return Err(CliError::config("sweep_norms must not be empty"));
        }
        if self.importance.batch_size == 0 || self.sweep.importance.batch_size == 0 {
            return Err(CliError::config("importance batch_size must be positive"));
        }
        if self.corpus.text.is_none() {
            self.corpus.grammar.validate()?;
            if self.corpus.grammar.max_len > self.model.max_seq_len {
                return Err(CliError::config(format!(
                    "grammar max_len {} exceeds model max_seq_len {}",
                    self.corpus.grammar.max_len, self.model.max_seq_len
                )));
            }
        }
        let k = self.freeze_k();
        if k > self.model.n_layers || (self.model.share_params && k > 0 && k < self.model.n_layers) {
            return Err(CliError::config(format!(
                "cannot freeze {k} layers of this {}-layer model",
                self.model.n_layers
            )));
        }
        let mut names = Vec::new();
        for t in &self.tasks {
            t.spec()?;
            if names.contains(&&t.name) {
                return Err(CliError::config(format!("task {} listed twice", t.name)));
            }
            names.push(&t.name);
        }
        Ok(())
    }
}
