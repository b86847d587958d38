use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::tasks::data::Example;
use crate::tensor::Tape;
use crate::transformer::{ForwardOptions, ForwardTrace, TokenBatch, Transformer};

const CHUNK: usize = 16;

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`.
///
/// Inputs are renormalized to sum to 1; `0 · ln 0` is taken as 0.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64, AnalysisError> {
    if p.len() != q.len() {
        return Err(AnalysisError::Contract(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(AnalysisError::Contract("distribution entries must be finite and non-negative".into()));
    }
    let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
    if sp == 0.0 || sq == 0.0 {
        return Err(AnalysisError::Contract("distribution sums to zero".into()));
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        js += 0.5 * term(a, m) + 0.5 * term(b, m);
    }
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// Per-head JS divergence between two models' attention on the same inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTable {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Mean over examples of the per-example mean over query positions.
    pub mean: Vec<f64>,
    /// Largest single-query divergence.
    pub max: Vec<f64>,
    pub n_examples: usize,
}

impl DivergenceTable {
    pub fn mean_at(&self, layer: usize, head: usize) -> f64 {
        self.mean[layer * self.n_heads + head]
    }

    pub fn max_at(&self, layer: usize, head: usize) -> f64 {
        self.max[layer * self.n_heads + head]
    }

    /// `(mean, max)` of the per-head mean values of `layer`.
    pub fn layer_summary(&self, layer: usize) -> (f64, f64) {
        let row = &self.mean[layer * self.n_heads..(layer + 1) * self.n_heads];
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        (mean, row.iter().copied().fold(0.0, f64::max))
    }
}

/// Per-layer L2 distance between two models' block outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDistanceProfile {
    /// Mean over all non-padding tokens.
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
    pub n_tokens: usize,
}

fn check_pair(a: &Transformer, b: &Transformer, examples: &[Example]) -> Result<(), AnalysisError> {
    if !a.config.same_geometry(&b.config) || a.config.vocab_size != b.config.vocab_size {
        return Err(AnalysisError::Geometry(format!(
            "models differ: {}x{} heads, vocab {} vs {}x{} heads, vocab {}",
            a.config.n_layers, a.config.n_heads, a.config.vocab_size, b.config.n_layers, b.config.n_heads, b.config.vocab_size
        )));
    }
    if examples.is_empty() {
        return Err(AnalysisError::Contract("comparison over no examples".into()));
    }
    Ok(())
}

fn trace(model: &Transformer, batch: &TokenBatch) -> Result<ForwardTrace, AnalysisError> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let opts = ForwardOptions {
        capture: true,
        ..ForwardOptions::default()
    };
    let out = model.encode(&mut tape, &vars, batch, opts)?;
    Ok(out.trace.expect("captured trace"))
}

/// Runs both models on the same chunks and folds `f` over them in order.
fn paired<T: Send>(
    a: &Transformer,
    b: &Transformer,
    examples: &[Example],
    f: impl Fn(&ForwardTrace, &ForwardTrace) -> Result<T, AnalysisError> + Sync,
) -> Result<Vec<T>, AnalysisError> {
    check_pair(a, b, examples)?;
    examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let seqs: Vec<&[u32]> = chunk.iter().map(|e| e.tokens.as_slice()).collect();
            let batch = TokenBatch::from_sequences(&seqs);
            f(&trace(a, &batch)?, &trace(b, &batch)?)
        })
        .collect()
}

/// JS divergence per head, per query position over non-padding keys.
pub fn attention_divergence(a: &Transformer, b: &Transformer, examples: &[Example]) -> Result<DivergenceTable, AnalysisError> {
    let (l, h) = (a.config.n_layers, a.config.n_heads);
    let parts = paired(a, b, examples, |ta, tb| {
        let mut sums = vec![0.0; l * h];
        let mut maxes = vec![0.0f64; l * h];
        for (e, &len) in ta.lengths.iter().enumerate() {
            for k in 0..l * h {
                let (pa, pb) = (&ta.attention[k][e], &tb.attention[k][e]);
                let mut per_example = 0.0;
                for qpos in 0..len {
                    let p: Vec<f64> = pa.row(qpos)[..len].iter().map(|&v| v as f64).collect();
                    let q: Vec<f64> = pb.row(qpos)[..len].iter().map(|&v| v as f64).collect();
                    let js = js_divergence(&p, &q)?;
                    per_example += js;
                    maxes[k] = maxes[k].max(js);
                }
                sums[k] += per_example / len as f64;
            }
        }
        Ok((sums, maxes))
    })?;
    let mut mean = vec![0.0; l * h];
    let mut max = vec![0.0f64; l * h];
    for (s, m) in parts {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        max.iter_mut().zip(m).for_each(|(a, b)| *a = a.max(b));
    }
    mean.iter_mut().for_each(|v| *v /= examples.len() as f64);
    Ok(DivergenceTable {
        n_layers: l,
        n_heads: h,
        mean,
        max,
        n_examples: examples.len(),
    })
}

/// Euclidean distance between block outputs per non-padding token.
pub fn feature_distance(a: &Transformer, b: &Transformer, examples: &[Example]) -> Result<LayerDistanceProfile, AnalysisError> {
    let l = a.config.n_layers;
    let parts = paired(a, b, examples, |ta, tb| {
        let mut sums = vec![0.0; l];
        let mut maxes = vec![0.0f64; l];
        let mut count = 0usize;
        for (e, &len) in ta.lengths.iter().enumerate() {
            count += len;
            for layer in 0..l {
                for pos in 0..len {
                    let d = ta
                        .feature(layer, e, pos)
                        .iter()
                        .zip(tb.feature(layer, e, pos))
                        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    sums[layer] += d;
                    maxes[layer] = maxes[layer].max(d);
                }
            }
        }
        Ok((sums, maxes, count))
    })?;
    let mut mean = vec![0.0; l];
    let mut max = vec![0.0f64; l];
    let mut n_tokens = 0;
    for (s, m, c) in parts {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        max.iter_mut().zip(m).for_each(|(a, b)| *a = a.max(b));
        n_tokens += c;
    }
    mean.iter_mut().for_each(|v| *v /= n_tokens as f64);
    Ok(LayerDistanceProfile { mean, max, n_tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn js_identical_and_disjoint() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn js_reference_value() {
        // direct KL sums with m = [0.5, 0.5]
        let kl = 0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln();
        let got = js_divergence(&[0.8, 0.2], &[0.2, 0.8]).unwrap();
        assert!((got - kl).abs() < 1e-15);
        assert!((got - 0.19274475702175753).abs() < 1e-15);
    }

    #[test]
    fn js_renormalizes_and_rejects_negative() {
        let a = js_divergence(&[2.0, 6.0], &[1.0, 1.0]).unwrap();
        let b = js_divergence(&[0.25, 0.75], &[0.5, 0.5]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(js_divergence(&[1.1, -0.1], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }
}
