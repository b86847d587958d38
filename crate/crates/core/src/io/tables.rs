//! CSV schemas for importance, trajectories, recall, divergence, distance
//! and correlation artifacts.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::analysis::{Correlation, DivergenceTable, LayerDistanceProfile, RecallCurve};
use crate::importance::{ImportanceTable, NormMode, PruneTrajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub layer: usize,
    pub head: usize,
    pub raw: f64,
    pub normalized: f64,
    pub norm_mode: String,
    pub n_examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub pruned_ratio: f64,
    pub retained_heads: usize,
    pub metric_name: String,
    pub metric_value: f64,
    pub relative_performance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub x: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    /// Per-seed recall values joined by `;`.
    pub seed_values: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub layer: usize,
    pub head: usize,
    pub mean_js_nats: f64,
    pub max_js_nats: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub layer: usize,
    pub mean_l2: f64,
    pub max_l2: f64,
}

/// The first row carries the summary columns, later rows one head each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub layer: Option<usize>,
    pub head: Option<usize>,
    pub importance: Option<f64>,
    pub divergence: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| IoError::Csv(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| IoError::Csv(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| IoError::at(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| IoError::Csv(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| IoError::Csv(format!("{}: {e}", path.display())))
}

pub fn importance_rows(t: &ImportanceTable) -> Vec<ImportanceRow> {
    t.heads()
        .into_iter()
        .map(|h| ImportanceRow {
            layer: h.layer,
            head: h.head,
            raw: t.raw_at(h),
            normalized: t.normalized_at(h),
            norm_mode: t.norm_mode.name().to_string(),
            n_examples: t.n_examples,
        })
        .collect()
}

/// Rebuilds a table (all heads live) from importance rows.
pub fn importance_from_rows(rows: &[ImportanceRow], shared: bool) -> Result<ImportanceTable, IoError> {
    let bad = |m: String| IoError::Format(m);
    let n_rows = rows.iter().map(|r| r.layer + 1).max().ok_or_else(|| bad("empty importance file".into()))?;
    let n_heads = rows.iter().map(|r| r.head + 1).max().unwrap_or(0);
    if rows.len() != n_rows * n_heads {
        return Err(bad(format!("{} rows for a {n_rows}x{n_heads} table", rows.len())));
    }
    let mut raw = vec![f64::NAN; rows.len()];
    let mut normalized = vec![f64::NAN; rows.len()];
    for r in rows {
        raw[r.layer * n_heads + r.head] = r.raw;
        normalized[r.layer * n_heads + r.head] = r.normalized;
    }
    let mut t = ImportanceTable::from_raw(n_rows, n_heads, shared, raw)
        .map_err(|e| bad(format!("importance rows: {e}")))?;
    if normalized.iter().any(|v| v.is_nan()) {
        return Err(bad("duplicate importance rows".into()));
    }
    t.normalized = normalized;
    t.norm_mode = NormMode::parse(&rows[0].norm_mode).ok_or_else(|| bad(format!("bad norm_mode {:?}", rows[0].norm_mode)))?;
    t.n_examples = rows[0].n_examples;
    Ok(t)
}

pub fn trajectory_rows(t: &PruneTrajectory) -> Vec<TrajectoryRow> {
    t.steps
        .iter()
        .map(|s| TrajectoryRow {
            step: s.step,
            pruned_ratio: s.pruned_ratio,
            retained_heads: s.retained_heads,
            metric_name: t.metric_name.clone(),
            metric_value: s.metric,
            relative_performance: s.relative_performance,
        })
        .collect()
}

pub fn recall_rows(c: &RecallCurve) -> Vec<RecallRow> {
    c.grid
        .iter()
        .enumerate()
        .map(|(i, &x)| RecallRow {
            x,
            recall_mean: c.mean[i],
            recall_std: c.std[i],
            seed_values: c
                .per_seed
                .iter()
                .map(|s| s[i].to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect()
}

pub fn divergence_rows(d: &DivergenceTable) -> Vec<DivergenceRow> {
    (0..d.n_layers)
        .flat_map(|l| (0..d.n_heads).map(move |h| (l, h)))
        .map(|(layer, head)| DivergenceRow {
            layer,
            head,
            mean_js_nats: d.mean_at(layer, head),
            max_js_nats: d.max_at(layer, head),
        })
        .collect()
}

pub fn distance_rows(p: &LayerDistanceProfile) -> Vec<DistanceRow> {
    p.mean
        .iter()
        .zip(&p.max)
        .enumerate()
        .map(|(layer, (&mean_l2, &max_l2))| DistanceRow { layer, mean_l2, max_l2 })
        .collect()
}

pub fn correlation_rows(c: &Correlation) -> Vec<CorrelationRow> {
    let summary = CorrelationRow {
        pearson_r: c.pearson_r,
        spearman_rho: c.spearman_rho,
        slope: c.slope,
        intercept: c.intercept,
        layer: None,
        head: None,
        importance: None,
        divergence: None,
    };
    std::iter::once(summary)
        .chain(c.points.iter().map(|p| CorrelationRow {
            pearson_r: None,
            spearman_rho: None,
            slope: None,
            intercept: None,
            layer: Some(p.head.layer),
            head: Some(p.head.head),
            importance: Some(p.importance),
            divergence: Some(p.divergence),
        }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::normalize_importance;

    #[test]
    fn importance_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imp.csv");
        let mut t = ImportanceTable::from_raw(2, 2, false, vec![0.1, 0.3, 0.0, 0.25]).unwrap();
        t.n_examples = 40;
        let t = normalize_importance(&t, NormMode::L2);
        write_rows(&path, &importance_rows(&t)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("layer,head,raw,normalized,norm_mode,n_examples\n"));
        let back = importance_from_rows(&read_rows(&path).unwrap(), false).unwrap();
        assert_eq!(back.raw, t.raw);
        assert_eq!(back.normalized, t.normalized);
        assert_eq!(back.norm_mode, NormMode::L2);
    }

    #[test]
    fn headers_match_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let check = |name: &str, header: &str, write: &dyn Fn(&Path)| {
            let p = dir.path().join(name);
            write(&p);
            let text = std::fs::read_to_string(&p).unwrap();
            assert_eq!(text.lines().next().unwrap(), header);
        };
        check("d.csv", "layer,head,mean_js_nats,max_js_nats", &|p| {
            write_rows(
                p,
                &[DivergenceRow {
                    layer: 0,
                    head: 0,
                    mean_js_nats: 0.0,
                    max_js_nats: 0.0,
                }],
            )
            .unwrap()
        });
        check("l.csv", "layer,mean_l2,max_l2", &|p| {
            write_rows(p, &[DistanceRow { layer: 0, mean_l2: 0.0, max_l2: 0.0 }]).unwrap()
        });
        check("r.csv", "x,recall_mean,recall_std,seed_values", &|p| {
            write_rows(
                p,
                &[RecallRow {
                    x: 0.5,
                    recall_mean: 1.0,
                    recall_std: 0.0,
                    seed_values: "1;1".into(),
                }],
            )
            .unwrap()
        });
        check(
            "t.csv",
            "step,pruned_ratio,retained_heads,metric_name,metric_value,relative_performance",
            &|p| {
                write_rows(
                    p,
                    &[TrajectoryRow {
                        step: 0,
                        pruned_ratio: 0.0,
                        retained_heads: 4,
                        metric_name: "accuracy".into(),
                        metric_value: 0.9,
                        relative_performance: 1.0,
                    }],
                )
                .unwrap()
            },
        );
    }
}
