use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimate::{estimate_importance, normalize_importance, rank_heads, table_live, ImportanceOptions, ImportanceTable, NormMode};
use super::ImportanceError;
use crate::analysis::HeadSet;
use crate::tasks::data::{Dataset, Example};
use crate::tasks::metrics::relative_performance;
use crate::tasks::train::{evaluate, EvalOptions};
use crate::transformer::{HeadId, Transformer};

/// Largest model `oracle_best_subset` will enumerate.
pub const ORACLE_MAX_HEADS: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Iterative,
    OneShot,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Iterative => "iterative",
            SweepMode::OneShot => "one_shot",
        }
    }
}

/// Dev subsample and masking seed used for every evaluation of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub max_examples: Option<usize>,
    pub seed: u64,
    pub p_mask: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_examples: None,
            seed: 0,
            p_mask: 0.15,
        }
    }
}

impl EvalSettings {
    pub fn subset(&self, data: &Dataset) -> Vec<Example> {
        Dataset::subsample(&data.dev, self.max_examples, self.seed)
    }

    pub fn score(&self, model: &Transformer, data: &Dataset, dev: &[Example]) -> Result<f64, ImportanceError> {
        let opts = EvalOptions {
            p_mask: self.p_mask,
            mask_seed: self.seed,
        };
        Ok(evaluate(model, &data.spec, dev, &opts)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub mode: SweepMode,
    /// Fraction of all heads masked per step, in (0, 1].
    pub step_fraction: f64,
    pub norm: NormMode,
    pub importance: ImportanceOptions,
    pub eval: EvalSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mode: SweepMode::Iterative,
            step_fraction: 0.1,
            norm: NormMode::L1,
            importance: ImportanceOptions::default(),
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub step: usize,
    pub pruned: Vec<HeadId>,
    pub pruned_ratio: f64,
    pub retained_heads: usize,
    pub metric: f64,
    pub relative_performance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneTrajectory {
    pub model_id: String,
    pub task: String,
    pub importance_task: String,
    pub seed: u64,
    pub norm: NormMode,
    pub mode: SweepMode,
    pub shared: bool,
    pub metric_name: String,
    pub full_metric: f64,
    /// Unit layout: `L × H`, or `1 × H` under sharing.
    pub n_rows: usize,
    pub n_heads: usize,
    pub steps: Vec<PruneStep>,
}

impl PruneTrajectory {
    /// Units still live after step `i`.
    pub fn retained_after(&self, i: usize) -> HeadSet {
        let mut set = self.all_units();
        for s in &self.steps[..=i] {
            for h in &s.pruned {
                set.remove(h);
            }
        }
        set
    }

    pub fn all_units(&self) -> HeadSet {
        (0..self.n_rows)
            .flat_map(|l| (0..self.n_heads).map(move |h| HeadId::new(l, h)))
            .collect()
    }
}

/// Prunable units of `model` in table layout.
pub fn units(model: &Transformer, shared: bool) -> Vec<HeadId> {
    let (l, h) = (model.config.n_layers, model.config.n_heads);
    let rows = if shared { 1 } else { l };
    (0..rows)
        .flat_map(|r| (0..h).map(move |j| HeadId::new(r, j)))
        .collect()
}

/// Masks a unit; under sharing head `id.head` is masked in every layer.
pub fn mask_unit(model: &mut Transformer, id: HeadId, shared: bool) {
    if shared {
        for l in 0..model.config.n_layers {
            model.gates.mask(HeadId::new(l, id.head));
        }
    } else {
        model.gates.mask(id);
    }
}

/// Copy of `model` with every unit outside `retained` masked.
pub fn with_retained(model: &Transformer, retained: &HeadSet, shared: bool) -> Transformer {
    let mut m = model.clone();
    for u in units(model, shared) {
        if !retained.contains(&u) {
            mask_unit(&mut m, u, shared);
        }
    }
    m
}

fn live_ranking(table: &ImportanceTable) -> Vec<HeadId> {
    rank_heads(table).into_iter().filter(|h| table.is_live(*h)).collect()
}

/// Masks heads lowest-importance first, evaluating after each step.
///
/// Iterative sweeps re-estimate importance on the partially pruned model
/// before every step; one-shot sweeps rank once. The model itself is not
/// modified.
pub fn prune_sweep(
    model: &Transformer,
    eval_data: &Dataset,
    importance_data: &Dataset,
    cfg: &SweepConfig,
    model_id: &str,
) -> Result<PruneTrajectory, ImportanceError> {
    if !(cfg.step_fraction > 0.0 && cfg.step_fraction <= 1.0) {
        return Err(ImportanceError::Config(format!(
            "step_fraction must be in (0, 1], got {}",
            cfg.step_fraction
        )));
    }
    let shared = model.config.share_params;
    let total = units(model, shared).len();
    let per_step = ((cfg.step_fraction * total as f64).ceil() as usize).max(1);
    let dev = cfg.eval.subset(eval_data);
    let full_metric = cfg.eval.score(model, eval_data, &dev)?;
    relative_performance(full_metric, full_metric)?;
    let mut m = model.clone();
    let mut live = table_live(&m, shared).iter().filter(|&&l| l).count();
    let mut steps = vec![PruneStep {
        step: 0,
        pruned: Vec::new(),
        pruned_ratio: (total - live) as f64 / total as f64,
        retained_heads: live,
        metric: full_metric,
        relative_performance: 1.0,
    }];
    let mut fixed: Option<Vec<HeadId>> = None;
    while live > 0 {
        let order = match (&fixed, cfg.mode) {
            (Some(order), SweepMode::OneShot) => order.clone(),
            _ => {
                let table = estimate_importance(&m, importance_data, shared, &cfg.importance)?;
                let order = live_ranking(&normalize_importance(&table, cfg.norm));
                fixed = Some(order.clone());
                order
            }
        };
        let pruned: Vec<HeadId> = order
            .into_iter()
            .filter(|u| live_unit(&m, *u, shared))
            .take(per_step)
            .collect();
        for &u in &pruned {
            mask_unit(&mut m, u, shared);
        }
        live -= pruned.len();
        let metric = cfg.eval.score(&m, eval_data, &dev)?;
        steps.push(PruneStep {
            step: steps.len(),
            pruned,
            pruned_ratio: (total - live) as f64 / total as f64,
            retained_heads: live,
            metric,
            relative_performance: relative_performance(metric, full_metric)?,
        });
    }
    Ok(PruneTrajectory {
        model_id: model_id.to_string(),
        task: eval_data.spec.name.clone(),
        importance_task: importance_data.spec.name.clone(),
        seed: cfg.importance.seed,
        norm: cfg.norm,
        mode: cfg.mode,
        shared,
        metric_name: eval_data.spec.metric.name().to_string(),
        full_metric,
        n_rows: if shared { 1 } else { model.config.n_layers },
        n_heads: model.config.n_heads,
        steps,
    })
}

fn live_unit(model: &Transformer, u: HeadId, shared: bool) -> bool {
    if shared {
        (0..model.config.n_layers).any(|l| model.gates.is_live(HeadId::new(l, u.head)))
    } else {
        model.gates.is_live(u)
    }
}

/// The `k` live units with the highest normalized importance.
pub fn retain_top(table: &ImportanceTable, k: usize) -> HeadSet {
    let order = live_ranking(table);
    order[order.len().saturating_sub(k)..].iter().copied().collect()
}

/// Relative performance of `trials` uniformly random prunings of `n_pruned` units.
pub fn random_prunings(
    model: &Transformer,
    data: &Dataset,
    n_pruned: usize,
    trials: usize,
    seed: u64,
    eval: &EvalSettings,
) -> Result<Vec<f64>, ImportanceError> {
    let shared = model.config.share_params;
    let all = units(model, shared);
    if n_pruned > all.len() {
        return Err(ImportanceError::Config(format!("cannot prune {n_pruned} of {} heads", all.len())));
    }
    let dev = eval.subset(data);
    let full = eval.score(model, data, &dev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let drop = rand::seq::index::sample(&mut rng, all.len(), n_pruned);
            let mut m = model.clone();
            for i in drop {
                mask_unit(&mut m, all[i], shared);
            }
            Ok(relative_performance(eval.score(&m, data, &dev)?, full)?)
        })
        .collect()
}

/// Exhaustive search for the `k`-unit retained set with the best dev metric.
/// Ties keep the first set in bitmask order.
pub fn oracle_best_subset(
    model: &Transformer,
    data: &Dataset,
    k: usize,
    eval: &EvalSettings,
) -> Result<(HeadSet, f64), ImportanceError> {
    let shared = model.config.share_params;
    let all = units(model, shared);
    if all.len() > ORACLE_MAX_HEADS {
        return Err(ImportanceError::Config(format!(
            "exhaustive search over {} heads refused (limit {ORACLE_MAX_HEADS})",
            all.len()
        )));
    }
    if k > all.len() {
        return Err(ImportanceError::Config(format!("cannot retain {k} of {} heads", all.len())));
    }
    let dev = eval.subset(data);
    let mut best: Option<(HeadSet, f64)> = None;
    for bits in 0u32..(1 << all.len()) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let set: HeadSet = all
            .iter()
            .enumerate()
            .filter(|(i, _)| bits >> i & 1 == 1)
            .map(|(_, h)| *h)
            .collect();
        let metric = eval.score(&with_retained(model, &set, shared), data, &dev)?;
        if best.as_ref().is_none_or(|b| metric > b.1) {
            best = Some((set, metric));
        }
    }
    Ok(best.expect("at least one subset"))
}

/// Duplicates the first half of every layer's heads into the second half.
///
/// Original heads keep `1 − copy_weight` of their output projection, copies
/// get `copy_weight`, and every gate is unmasked. When the second half was
/// masked in `model`, the result computes exactly the same function.
pub fn planted_redundancy(model: &Transformer, copy_weight: f32) -> Result<Transformer, ImportanceError> {
    let h = model.config.n_heads;
    if h % 2 != 0 {
        return Err(ImportanceError::Config("planted redundancy needs an even head count".into()));
    }
    if !(copy_weight > 0.0 && copy_weight < 1.0) {
        return Err(ImportanceError::Config("copy_weight must be in (0, 1)".into()));
    }
    let mut m = model.clone();
    for blk in &mut m.blocks {
        for j in 0..h / 2 {
            let mut copy = blk.heads[j].clone();
            copy.wo.data_mut().iter_mut().for_each(|w| *w *= copy_weight);
            blk.heads[j].wo.data_mut().iter_mut().for_each(|w| *w *= 1.0 - copy_weight);
            blk.heads[j + h / 2] = copy;
        }
    }
    m.gates.reset();
    Ok(m)
}
