//! Masked-LM pre-training, classification fine-tuning and evaluation.
//!
//! Minibatches are split into fixed chunks of [`CHUNK`] examples whose
//! gradients are computed independently (possibly in parallel) and summed in
//! chunk order, so results do not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{mask_tokens, Batch, Dataset, Example, Labels, TaskKind, TaskSpec};
use super::metrics::{argmax, recall_counts, score};
use super::TaskError;
use crate::tensor::{Element, Tape, Var};
use crate::transformer::{EncoderOutput, ForwardOptions, ModelVars, Transformer};

pub const CHUNK: usize = 8;
const EVAL_CHUNK: usize = 32;
const DEV_MASK_STREAM: u64 = 0xde5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub p_mask: f64,
    /// Dev evaluation interval in steps (0: only at start and end).
    pub eval_every: usize,
    /// Cap on dev examples used for evaluation.
    pub eval_examples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            lr: 2e-3,
            warmup_frac: 0.05,
            weight_decay: 0.01,
            grad_clip: 1.0,
            p_mask: 0.15,
            eval_every: 0,
            eval_examples: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.batch_size == 0 {
            return Err(TaskError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TaskError::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(TaskError::Config("warmup_frac must be in [0, 1)".into()));
        }
        if !(self.p_mask > 0.0 && self.p_mask < 1.0) {
            return Err(TaskError::Config("p_mask must be in (0, 1)".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let warm = (self.warmup_frac * self.steps as f64).ceil() as usize;
        if step < warm {
            return self.lr * (step + 1) as f64 / warm as f64;
        }
        let rest = (self.steps - warm).max(1) as f64;
        let frac = (step - warm) as f64 / rest;
        self.lr * (1.0 - 0.9 * frac)
    }
}

/// Decoupled-weight-decay Adam over the model's canonical parameter list.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamW {
    pub fn new(model: &Transformer) -> Self {
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, _, t)| t.numel()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update. Parameters without a gradient (frozen) are untouched.
    pub fn step(&mut self, model: &mut Transformer, grads: &[Option<Vec<f32>>], lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, _, param)) in model.named_params_mut().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let decay = if param.rank() == 2 && !name.starts_with("embed") {
                weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mn = self.beta1 * *m as f64 + (1.0 - self.beta1) * g;
                let vn = self.beta2 * *v as f64 + (1.0 - self.beta2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let update = (mn / bc1) / ((vn / bc2).sqrt() + self.eps);
                let pv = *p as f64;
                *p = (pv - lr * (update + decay * pv)) as f32;
            }
        }
    }
}

/// Task loss on `batch`, averaged over `denom` targets.
pub fn batch_loss<E: Element>(
    model: &Transformer<E>,
    tape: &mut Tape<E>,
    vars: &ModelVars,
    batch: &Batch,
    opts: ForwardOptions,
    denom: f64,
) -> Result<(Var, EncoderOutput<E>), TaskError> {
    let out = model.encode(tape, vars, &batch.tokens, opts)?;
    let loss = match &batch.labels {
        Labels::Classes(c) => {
            let logits = model.cls_logits(tape, vars, out.hidden, &batch.tokens)?;
            let targets: Vec<Option<usize>> = c.iter().map(|&c| Some(c)).collect();
            tape.cross_entropy(logits, &targets, denom)?
        }
        Labels::Masked(t) => {
            let logits = model.mlm_logits(tape, vars, out.hidden)?;
            tape.cross_entropy(logits, t, denom)?
        }
    };
    Ok((loss, out))
}

fn chunks(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size).map(|s| (s, size.min(n - s))).collect()
}

/// Loss and parameter gradients for `batch`, mean over its targets.
pub fn loss_and_grads(model: &Transformer, batch: &Batch) -> Result<(f64, Vec<Option<Vec<f32>>>), TaskError> {
    let denom = batch.n_targets() as f64;
    if denom == 0.0 {
        return Err(TaskError::Contract("batch has no targets".into()));
    }
    let parts: Vec<(f64, Vec<Option<Vec<f32>>>)> = chunks(batch.batch_size(), CHUNK)
        .into_par_iter()
        .map(|(start, len)| {
            let sub = batch.slice(start, len);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            if sub.n_targets() == 0 {
                return Ok((0.0, vec![None; vars.all.len()]));
            }
            let (loss, _) = batch_loss(model, &mut tape, &vars, &sub, ForwardOptions::default(), denom)?;
            let grads = tape.backward(loss)?;
            let g = vars.all.iter().map(|&v| grads.slice(v).map(<[f32]>::to_vec)).collect();
            Ok((tape.value(loss).data()[0] as f64, g))
        })
        .collect::<Result<_, TaskError>>()?;
    let mut total = 0.0;
    let mut acc: Vec<Option<Vec<f32>>> = Vec::new();
    for (loss, g) in parts {
        total += loss;
        if acc.is_empty() {
            acc = g;
            continue;
        }
        for (a, g) in acc.iter_mut().zip(g) {
            match (a.as_mut(), g) {
                (Some(a), Some(g)) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                (None, Some(g)) => *a = Some(g),
                _ => {}
            }
        }
    }
    Ok((total, acc))
}

fn clip(grads: &mut [Option<Vec<f32>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// Settings for dev-set evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub p_mask: f64,
    pub mask_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            p_mask: 0.15,
            mask_seed: DEV_MASK_STREAM,
        }
    }
}

/// Class predictions (argmax logits) for each example.
pub fn predict_classes(model: &Transformer, examples: &[Example]) -> Result<Vec<usize>, TaskError> {
    let parts: Vec<Vec<usize>> = chunks(examples.len(), EVAL_CHUNK)
        .into_par_iter()
        .map(|(s, n)| {
            let batch = Batch::classification(&examples[s..s + n])?;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, false);
            let out = model.encode(&mut tape, &vars, &batch.tokens, ForwardOptions::default())?;
            let logits = model.cls_logits(&mut tape, &vars, out.hidden, &batch.tokens)?;
            let lv = tape.value(logits);
            Ok((0..n).map(|i| argmax(lv.row(i))).collect())
        })
        .collect::<Result<_, TaskError>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Recall@1 over a pre-masked batch.
pub fn masked_recall(model: &Transformer, batch: &Batch) -> Result<f64, TaskError> {
    let parts: Vec<(usize, usize)> = chunks(batch.batch_size(), EVAL_CHUNK)
        .into_par_iter()
        .map(|(s, n)| {
            let sub = batch.slice(s, n);
            let Labels::Masked(t) = &sub.labels else {
                return Err(TaskError::Contract("recall@1 needs masked-LM labels".into()));
            };
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, false);
            let out = model.encode(&mut tape, &vars, &sub.tokens, ForwardOptions::default())?;
            let logits = model.mlm_logits(&mut tape, &vars, out.hidden)?;
            Ok(recall_counts(tape.value(logits), t))
        })
        .collect::<Result<_, TaskError>>()?;
    let (hits, total) = parts.into_iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(TaskError::Contract("recall@1 over no masked positions".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Dev metric of `model` on `examples` per the task's metric.
pub fn evaluate(model: &Transformer, spec: &TaskSpec, examples: &[Example], opts: &EvalOptions) -> Result<f64, TaskError> {
    match spec.kind {
        TaskKind::MaskedLm => {
            let batch = mask_tokens(examples, model.config.vocab_size, opts.p_mask, opts.mask_seed)?;
            masked_recall(model, &batch)
        }
        TaskKind::Classification { .. } => {
            let preds = predict_classes(model, examples)?;
            let labels: Vec<usize> = examples
                .iter()
                .map(|e| e.label.ok_or_else(|| TaskError::Contract("unlabeled example".into())))
                .collect::<Result<_, _>>()?;
            score(spec.metric, &preds, &labels)
        }
    }
}

fn check_geometry(model: &Transformer, data: &Dataset) -> Result<(), TaskError> {
    if data.vocab.len() != model.config.vocab_size {
        return Err(TaskError::Geometry(format!(
            "dataset vocabulary has {} tokens, model expects {}",
            data.vocab.len(),
            model.config.vocab_size
        )));
    }
    if data.max_len() > model.config.max_seq_len {
        return Err(TaskError::Geometry(format!(
            "dataset sequences reach {} tokens, model max_seq_len is {}",
            data.max_len(),
            model.config.max_seq_len
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub seed: u64,
    pub steps: usize,
    pub losses: Vec<f64>,
    /// `(step, dev Recall@1)`
    pub recall_curve: Vec<(usize, f64)>,
    pub final_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub task: String,
    pub seed: u64,
    pub steps: usize,
    pub frozen_layers: usize,
    pub losses: Vec<f64>,
    pub initial_metric: f64,
    pub dev_metric: f64,
}

fn training_loop(
    model: &mut Transformer,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    mut make_batch: impl FnMut(&[Example], u64) -> Result<Batch, TaskError>,
    mut eval: impl FnMut(&Transformer, usize) -> Result<(), TaskError>,
) -> Result<Vec<f64>, TaskError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TaskError::Contract("empty training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(model);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<Example> = (0..cfg.batch_size)
            .map(|_| data.train[rng.random_range(0..data.train.len())].clone())
            .collect();
        let batch = make_batch(&picks, rng.random())?;
        if batch.n_targets() == 0 {
            losses.push(f64::NAN);
            continue;
        }
        let (loss, mut grads) = loss_and_grads(model, &batch)?;
        if !loss.is_finite() {
            return Err(TaskError::Diverged { step });
        }
        clip(&mut grads, cfg.grad_clip);
        opt.step(model, &grads, cfg.lr_at(step), cfg.weight_decay);
        losses.push(loss);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps {
            eval(model, step + 1)?;
        }
    }
    Ok(losses)
}

/// Masked-LM pre-training. Attaches an MLM head if the model has none.
pub fn pretrain(model: &mut Transformer, corpus: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<PretrainReport, TaskError> {
    if corpus.spec.kind != TaskKind::MaskedLm {
        return Err(TaskError::Config(format!("{} is not a masked-LM corpus", corpus.spec.name)));
    }
    check_geometry(model, corpus)?;
    if model.mlm_head.is_none() {
        model.attach_mlm_head(seed);
    }
    let dev = Dataset::subsample(&corpus.dev, cfg.eval_examples, seed);
    let eval_opts = EvalOptions {
        p_mask: cfg.p_mask,
        ..EvalOptions::default()
    };
    let mut curve = vec![(0, evaluate(model, &corpus.spec, &dev, &eval_opts)?)];
    let vocab_size = model.config.vocab_size;
    let losses = training_loop(
        model,
        corpus,
        cfg,
        seed,
        |ex, s| mask_tokens(ex, vocab_size, cfg.p_mask, s),
        |m, step| {
            curve.push((step, evaluate(m, &corpus.spec, &dev, &eval_opts)?));
            Ok(())
        },
    )?;
    let final_recall = evaluate(model, &corpus.spec, &dev, &eval_opts)?;
    curve.push((cfg.steps, final_recall));
    Ok(PretrainReport {
        seed,
        steps: cfg.steps,
        losses,
        recall_curve: curve,
        final_recall,
    })
}

/// Fine-tunes a copy of `base` on a classification task: the MLM head is
/// dropped, a fresh classifier attached and the lowest `frozen_layers`
/// layers (plus embeddings) frozen. Masked heads of `base` stay masked.
pub fn finetune(
    base: &Transformer,
    data: &Dataset,
    cfg: &TrainConfig,
    frozen_layers: usize,
    seed: u64,
) -> Result<(Transformer, FinetuneReport), TaskError> {
    let n_classes = data
        .spec
        .n_classes()
        .ok_or_else(|| TaskError::Config(format!("{} is not a classification task", data.spec.name)))?;
    check_geometry(base, data)?;
    let mut model = base.clone();
    model.mlm_head = None;
    model.attach_classifier(n_classes, seed);
    model.freeze_layers(frozen_layers)?;
    let dev = Dataset::subsample(&data.dev, cfg.eval_examples, seed);
    let opts = EvalOptions::default();
    let initial_metric = evaluate(&model, &data.spec, &dev, &opts)?;
    let losses = training_loop(
        &mut model,
        data,
        cfg,
        seed,
        |ex, _| Batch::classification(ex),
        |_, _| Ok(()),
    )?;
    let dev_metric = evaluate(&model, &data.spec, &dev, &opts)?;
    Ok((
        model,
        FinetuneReport {
            task: data.spec.name.clone(),
            seed,
            steps: cfg.steps,
            frozen_layers,
            losses,
            initial_metric,
            dev_metric,
        },
    ))
}
