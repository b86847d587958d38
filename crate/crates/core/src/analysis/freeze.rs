use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::tasks::data::Dataset;
use crate::tasks::metrics::relative_performance;
use crate::tasks::train::{finetune, TrainConfig};
use crate::transformer::Transformer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeComparison {
    pub task: String,
    pub frozen_layers: usize,
    pub seed: u64,
    pub frozen_metric: f64,
    pub unfrozen_metric: f64,
    /// `frozen / unfrozen`, 1.0 exactly when nothing is frozen.
    pub ratio: f64,
}

/// Fine-tunes `base` with and without its lowest `k` layers frozen, same
/// seed and budget, and reports the metric ratio.
pub fn freeze_compare(
    base: &Transformer,
    data: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<FreezeComparison, AnalysisError> {
    let layers = base.config.n_layers;
    if k > layers {
        return Err(AnalysisError::Contract(format!("cannot freeze {k} of {layers} layers")));
    }
    let (_, unfrozen) = finetune(base, data, cfg, 0, seed)?;
    let frozen_metric = if k == 0 {
        unfrozen.dev_metric
    } else {
        finetune(base, data, cfg, k, seed)?.1.dev_metric
    };
    let ratio = if k == 0 {
        1.0
    } else {
        relative_performance(frozen_metric, unfrozen.dev_metric)?
    };
    Ok(FreezeComparison {
        task: data.spec.name.clone(),
        frozen_layers: k,
        seed,
        frozen_metric,
        unfrozen_metric: unfrozen.dev_metric,
        ratio,
    })
}
