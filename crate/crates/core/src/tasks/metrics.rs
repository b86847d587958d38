//! Evaluation metrics. Binary metrics treat class 1 as positive.

use super::data::MetricKind;
use super::TaskError;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn check(preds: &[usize], labels: &[usize]) -> Result<(), TaskError> {
    if preds.is_empty() {
        return Err(TaskError::Contract("metric over empty input".into()));
    }
    if preds.len() != labels.len() {
        return Err(TaskError::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<Confusion, TaskError> {
    check(preds, labels)?;
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(TaskError::Contract(format!("binary metric got class {}", p.max(l))));
        }
        match (p, l) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(preds: &[usize], labels: &[usize]) -> Result<f64, TaskError> {
    let c = confusion(preds, labels)?;
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / den.sqrt())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, TaskError> {
    check(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Binary F1 of the positive class, `2TP / (2TP + FP + FN)`; 0 when nothing
/// is predicted positive.
pub fn f1(preds: &[usize], labels: &[usize]) -> Result<f64, TaskError> {
    let c = confusion(preds, labels)?;
    if c.tp + c.fp == 0 {
        return Ok(0.0);
    }
    let tp = c.tp as f64;
    Ok(2.0 * tp / (2.0 * tp + c.fp as f64 + c.fn_ as f64))
}

/// `(accuracy + F1) / 2`
pub fn avg_acc_f1(preds: &[usize], labels: &[usize]) -> Result<f64, TaskError> {
    Ok((accuracy(preds, labels)? + f1(preds, labels)?) / 2.0)
}

/// Index of the largest value; the first one on ties.
pub fn argmax<E: Element>(row: &[E]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of targeted rows of `logits` whose argmax equals the target.
pub fn recall_at_1<E: Element>(logits: &Tensor<E>, targets: &[Option<usize>]) -> Result<f64, TaskError> {
    let (rows, _) = logits.dims2("recall_at_1")?;
    if rows != targets.len() {
        return Err(TaskError::Contract(format!("{rows} logit rows for {} targets", targets.len())));
    }
    let (hits, total) = recall_counts(logits, targets);
    if total == 0 {
        return Err(TaskError::Contract("recall@1 over no masked positions".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// `(hits, targets)` for Recall@1 accumulation across batches.
pub fn recall_counts<E: Element>(logits: &Tensor<E>, targets: &[Option<usize>]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            total += 1;
            if argmax(logits.row(i)) == *t {
                hits += 1;
            }
        }
    }
    (hits, total)
}

/// Scores class predictions with a classification metric.
pub fn score(metric: MetricKind, preds: &[usize], labels: &[usize]) -> Result<f64, TaskError> {
    match metric {
        MetricKind::Mcc => mcc(preds, labels),
        MetricKind::Accuracy => accuracy(preds, labels),
        MetricKind::AvgAccF1 => avg_acc_f1(preds, labels),
        MetricKind::RecallAt1 => Err(TaskError::Contract(
            "recall@1 is scored from logits, not class predictions".into(),
        )),
    }
}

/// `max(pruned, 0) / full`. Negative metrics (MCC) are clamped to 0 first.
pub fn relative_performance(metric_pruned: f64, metric_full: f64) -> Result<f64, TaskError> {
    if !(metric_full > 0.0) {
        return Err(TaskError::UndefinedRelative(metric_full));
    }
    Ok(metric_pruned.max(0.0) / metric_full)
}
