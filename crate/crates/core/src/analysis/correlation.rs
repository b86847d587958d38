use serde::{Deserialize, Serialize};

use super::compare::DivergenceTable;
use super::AnalysisError;
use crate::importance::ImportanceTable;
use crate::transformer::HeadId;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy, sxx, syy)
}

fn check(x: &[f64], y: &[f64]) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::Contract(format!("{} vs {} points", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(AnalysisError::Contract("correlation needs at least 3 points".into()));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check(x, y)?;
    let (sxy, sxx, syy) = moments(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Contract("correlation of a constant variable".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Least-squares `(slope, intercept)` of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64), AnalysisError> {
    check(x, y)?;
    let (sxy, sxx, _) = moments(x, y);
    if sxx == 0.0 {
        return Err(AnalysisError::Contract("regression on a constant variable".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, mean(y) - slope * mean(x)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub head: HeadId,
    pub importance: f64,
    pub divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `None` when either variable is constant.
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    /// Regression of divergence on importance.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub points: Vec<ScatterPoint>,
}

/// Correlation between normalized importance and mean JS divergence, one
/// point per head.
pub fn importance_divergence_correlation(
    importance: &ImportanceTable,
    divergence: &DivergenceTable,
) -> Result<Correlation, AnalysisError> {
    if importance.shared || (importance.n_rows, importance.n_heads) != (divergence.n_layers, divergence.n_heads) {
        return Err(AnalysisError::Geometry(format!(
            "importance table is {}x{}{}, divergence table {}x{}",
            importance.n_rows,
            importance.n_heads,
            if importance.shared { " (shared)" } else { "" },
            divergence.n_layers,
            divergence.n_heads
        )));
    }
    let points: Vec<ScatterPoint> = importance
        .heads()
        .into_iter()
        .map(|head| ScatterPoint {
            head,
            importance: importance.normalized_at(head),
            divergence: divergence.mean_at(head.layer, head.head),
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| p.importance).collect();
    let y: Vec<f64> = points.iter().map(|p| p.divergence).collect();
    check(&x, &y)?;
    let fit = linear_fit(&x, &y).ok();
    Ok(Correlation {
        pearson_r: pearson(&x, &y).ok(),
        spearman_rho: spearman(&x, &y).ok(),
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        points,
    })
}
