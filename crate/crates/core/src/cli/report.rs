use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::commands::CompareInfo;
use super::{CliError, ReportArgs};
use crate::analysis::correlation::linear_fit;
use crate::analysis::{FreezeComparison, RecallCurve};
use crate::importance::PruneTrajectory;
use crate::io::svg::{Band, Chart, Series};
use crate::io::tables::{read_rows, CorrelationRow, DistanceRow, DivergenceRow};
use crate::io::{read_json, write_json};

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn mean_std_opt(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_std(v);
    (Some(m), Some(s))
}

#[derive(Debug, Default, Serialize)]
struct SweepSummary {
    task: String,
    norm: String,
    mode: String,
    seeds: Vec<u64>,
    full_metric_mean: f64,
    full_metric_std: f64,
    pruned_ratio: Vec<f64>,
    relative_mean: Vec<f64>,
    relative_std: Vec<f64>,
}

#[derive(Debug, Default, Serialize)]
struct RecallSummary {
    task: String,
    seeds: Vec<u64>,
    grid: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Debug, Default, Serialize)]
struct CompareSummary {
    task: String,
    pairs: usize,
    layer_js_mean: Vec<f64>,
    layer_js_max: Vec<f64>,
    layer_l2_mean: Vec<f64>,
    layer_l2_max: Vec<f64>,
    /// Pairs whose correlation is defined.
    correlation_pairs: usize,
    pearson_mean: Option<f64>,
    pearson_std: Option<f64>,
    spearman_mean: Option<f64>,
    spearman_std: Option<f64>,
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    sweeps: Vec<SweepSummary>,
    recall: Vec<RecallSummary>,
    compare: Vec<CompareSummary>,
    freeze: Vec<FreezeComparison>,
    absent: Vec<String>,
    charts: Vec<String>,
}

fn files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(prefix) && name.ends_with(ext) && !name.ends_with(".manifest.json")
        })
        .collect();
    out.sort();
    Ok(out)
}

fn sweep_charts(trajs: &[PruneTrajectory], out: &Path, summary: &mut Summary) -> Result<(), CliError> {
    let mut by_task: BTreeMap<String, Vec<&PruneTrajectory>> = BTreeMap::new();
    for t in trajs {
        by_task.entry(t.task.clone()).or_default().push(t);
    }
    for (task, ts) in by_task {
        let mut chart = Chart::new(
            &format!("Pruning: {task}"),
            "ratio of heads pruned",
            "performance relative to full model",
        );
        let mut groups: BTreeMap<(String, String), Vec<&PruneTrajectory>> = BTreeMap::new();
        for t in &ts {
            groups
                .entry((t.norm.name().to_string(), t.mode.name().to_string()))
                .or_default()
                .push(t);
        }
        for (color, ((norm, mode), group)) in groups.into_iter().enumerate() {
            for t in &group {
                chart.lines.push(Series {
                    label: String::new(),
                    points: t.steps.iter().map(|s| (s.pruned_ratio, s.relative_performance)).collect(),
                    dotted: true,
                    color,
                });
            }
            let n_steps = group.iter().map(|t| t.steps.len()).min().unwrap_or(0);
            let mut s = SweepSummary {
                task: task.clone(),
                norm: norm.clone(),
                mode: mode.clone(),
                seeds: group.iter().map(|t| t.seed).collect(),
                ..SweepSummary::default()
            };
            (s.full_metric_mean, s.full_metric_std) = mean_std(&group.iter().map(|t| t.full_metric).collect::<Vec<_>>());
            for i in 0..n_steps {
                let (m, sd) = mean_std(&group.iter().map(|t| t.steps[i].relative_performance).collect::<Vec<_>>());
                s.pruned_ratio.push(group[0].steps[i].pruned_ratio);
                s.relative_mean.push(m);
                s.relative_std.push(sd);
            }
            chart.lines.push(Series {
                label: format!("{norm} {mode}"),
                points: s.pruned_ratio.iter().copied().zip(s.relative_mean.iter().copied()).collect(),
                dotted: false,
                color,
            });
            summary.sweeps.push(s);
        }
        chart.x_range = Some((0.0, 1.0));
        let name = format!("prune_{task}.svg");
        write_chart(out, &name, &chart, summary)?;
    }
    Ok(())
}

fn recall_charts(curves: &[RecallCurve], out: &Path, summary: &mut Summary) -> Result<(), CliError> {
    for (color, c) in curves.iter().enumerate() {
        let mut chart = Chart::new(
            &format!("Recall of {} heads (threshold {})", c.task, c.downstream_threshold),
            "pre-train relative performance x",
            "recall",
        );
        chart.bands.push(Band {
            points: c
                .grid
                .iter()
                .zip(c.mean.iter().zip(&c.std))
                .map(|(&x, (&m, &s))| (x, m - s, m + s))
                .collect(),
            color,
        });
        for seed in &c.per_seed {
            chart.lines.push(Series {
                label: String::new(),
                points: c.grid.iter().copied().zip(seed.iter().copied()).collect(),
                dotted: true,
                color,
            });
        }
        chart.lines.push(Series {
            label: format!("{} mean", c.task),
            points: c.grid.iter().copied().zip(c.mean.iter().copied()).collect(),
            dotted: false,
            color,
        });
        chart.x_range = Some((0.0, 1.0));
        chart.y_range = Some((0.0, 1.05));
        write_chart(out, &format!("recall_{}.svg", c.task), &chart, summary)?;
        summary.recall.push(RecallSummary {
            task: c.task.clone(),
            seeds: c.seeds.clone(),
            grid: c.grid.clone(),
            mean: c.mean.clone(),
            std: c.std.clone(),
        });
    }
    Ok(())
}

fn write_chart(out: &Path, name: &str, chart: &Chart, summary: &mut Summary) -> Result<(), CliError> {
    let path = out.join(name);
    std::fs::write(&path, chart.render()).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    summary.charts.push(name.to_string());
    Ok(())
}

fn per_layer<T>(rows: &[T], n: usize, layer: impl Fn(&T) -> usize, value: impl Fn(&T) -> f64, max: bool) -> Vec<f64> {
    let mut acc = vec![0.0f64; n];
    let mut count = vec![0usize; n];
    for r in rows {
        let l = layer(r);
        if max {
            acc[l] = acc[l].max(value(r));
        } else {
            acc[l] += value(r);
        }
        count[l] += 1;
    }
    if !max {
        acc.iter_mut().zip(&count).for_each(|(a, &c)| *a /= c.max(1) as f64);
    }
    acc
}

fn compare_charts(dir: &Path, out: &Path, summary: &mut Summary) -> Result<(), CliError> {
    let infos = files(dir, "compare_", ".json")?;
    let mut by_task: BTreeMap<String, Vec<(String, CompareInfo)>> = BTreeMap::new();
    for p in &infos {
        let info: CompareInfo = read_json(p)?;
        let pair = p.file_stem().unwrap().to_string_lossy().trim_start_matches("compare_").to_string();
        by_task.entry(info.task.clone()).or_default().push((pair, info));
    }
    let mut js_chart = Chart::new("Attention JS divergence per layer", "layer", "JS divergence (nats)");
    let mut l2_chart = Chart::new("Feature L2 distance per layer", "layer", "L2 distance");
    for (color, (task, pairs)) in by_task.into_iter().enumerate() {
        let mut s = CompareSummary {
            task: task.clone(),
            pairs: pairs.len(),
            ..CompareSummary::default()
        };
        let mut js_mean = Vec::new();
        let mut js_max = Vec::new();
        let mut l2_mean = Vec::new();
        let mut l2_max = Vec::new();
        let mut scatter = Vec::new();
        for (pair, _) in &pairs {
            let div: Vec<DivergenceRow> = read_rows(&dir.join(format!("divergence_{pair}.csv")))?;
            let dist: Vec<DistanceRow> = read_rows(&dir.join(format!("distance_{pair}.csv")))?;
            let corr: Vec<CorrelationRow> = read_rows(&dir.join(format!("correlation_{pair}.csv")))?;
            let layers = div.iter().map(|r| r.layer + 1).max().unwrap_or(0);
            let head_means = per_layer(&div, layers, |r| r.layer, |r| r.mean_js_nats, false);
            js_mean.push(head_means);
            js_max.push(per_layer(&div, layers, |r| r.layer, |r| r.mean_js_nats, true));
            l2_mean.push(dist.iter().map(|r| r.mean_l2).collect::<Vec<_>>());
            l2_max.push(dist.iter().map(|r| r.max_l2).collect::<Vec<_>>());
            scatter.extend(corr.iter().filter_map(|r| Some((r.importance?, r.divergence?))));
        }
        let avg = |rows: &[Vec<f64>]| -> Vec<f64> {
            let n = rows.iter().map(Vec::len).min().unwrap_or(0);
            (0..n).map(|i| mean_std(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()).0).collect()
        };
        s.layer_js_mean = avg(&js_mean);
        s.layer_js_max = avg(&js_max);
        s.layer_l2_mean = avg(&l2_mean);
        s.layer_l2_max = avg(&l2_max);
        let pts = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect::<Vec<_>>();
        for (chart, mean, max) in [
            (&mut js_chart, &s.layer_js_mean, &s.layer_js_max),
            (&mut l2_chart, &s.layer_l2_mean, &s.layer_l2_max),
        ] {
            chart.lines.push(Series {
                label: format!("{task} mean"),
                points: pts(mean),
                dotted: false,
                color,
            });
            chart.lines.push(Series {
                label: format!("{task} max"),
                points: pts(max),
                dotted: true,
                color,
            });
        }
        let defined = |f: fn(&CompareInfo) -> Option<f64>| pairs.iter().filter_map(|p| f(&p.1)).collect::<Vec<_>>();
        (s.pearson_mean, s.pearson_std) = mean_std_opt(&defined(|c| c.pearson_r));
        (s.spearman_mean, s.spearman_std) = mean_std_opt(&defined(|c| c.spearman_rho));
        s.correlation_pairs = defined(|c| c.pearson_r).len();
        let mut chart = Chart::new(
            &format!("Importance vs divergence: {task}"),
            "normalized importance",
            "mean JS divergence (nats)",
        );
        let xs: Vec<f64> = scatter.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = scatter.iter().map(|p| p.1).collect();
        if let Ok((slope, intercept)) = linear_fit(&xs, &ys) {
            let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            chart.lines.push(Series {
                label: "linear fit".into(),
                points: vec![(lo, slope * lo + intercept), (hi, slope * hi + intercept)],
                dotted: false,
                color,
            });
        }
        chart.scatter = scatter;
        write_chart(out, &format!("correlation_{task}.svg"), &chart, summary)?;
        summary.compare.push(s);
    }
    if !summary.compare.is_empty() {
        write_chart(out, "divergence_layers.svg", &js_chart, summary)?;
        write_chart(out, "distance_layers.svg", &l2_chart, summary)?;
    }
    Ok(())
}

/// Renders charts and `summary.json` from the artifacts in `args.dir`.
pub fn cmd_report(args: &ReportArgs) -> Result<Vec<PathBuf>, CliError> {
    if !args.dir.is_dir() {
        return Err(CliError::config(format!("artifact directory {} does not exist", args.dir.display())));
    }
    let trajectories = files(&args.dir, "trajectory_", ".json")?;
    let recalls = files(&args.dir, "recall_", ".json")?;
    let compares = files(&args.dir, "compare_", ".json")?;
    let freezes = files(&args.dir, "freeze_", ".json")?;
    let mut absent = Vec::new();
    for (kind, list) in [
        ("trajectory_*.json", &trajectories),
        ("recall_*.json", &recalls),
        ("compare_*.json", &compares),
        ("freeze_*.json", &freezes),
    ] {
        if list.is_empty() {
            absent.push(kind.to_string());
        }
    }
    if trajectories.is_empty() {
        return Err(CliError::config(format!(
            "no pruning trajectories in {}; absent: {}",
            args.dir.display(),
            absent.join(", ")
        )));
    }
    let out = args.out.clone().unwrap_or_else(|| args.dir.join("report"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::config(format!("{}: {e}", out.display())))?;
    let mut summary = Summary {
        absent,
        ..Summary::default()
    };
    let trajs: Vec<PruneTrajectory> = trajectories.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    sweep_charts(&trajs, &out, &mut summary)?;
    let curves: Vec<RecallCurve> = recalls.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    recall_charts(&curves, &out, &mut summary)?;
    compare_charts(&args.dir, &out, &mut summary)?;
    summary.freeze = freezes.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    let mut written: Vec<PathBuf> = summary.charts.iter().map(|c| out.join(c)).collect();
    written.push(path);
    Ok(written)
}
