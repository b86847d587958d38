use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::importance::PruneTrajectory;
use crate::transformer::HeadId;

pub type HeadSet = BTreeSet<HeadId>;

/// Threshold applied to downstream trajectories.
pub const DOWNSTREAM_THRESHOLD: f64 = 0.9;

/// Retained heads selected from a trajectory at threshold `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedHeads {
    pub heads: HeadSet,
    pub task: String,
    pub threshold: f64,
    pub trajectory: String,
    /// Trajectory step the set was read from.
    pub step: usize,
}

/// Scans from the most-pruned step back to step 0 and returns the retained
/// set of the first step whose relative performance reaches `x`; the full set
/// when none does.
pub fn head_set_at_performance(traj: &PruneTrajectory, x: f64) -> Result<SelectedHeads, AnalysisError> {
    if traj.steps.is_empty() {
        return Err(AnalysisError::Contract("empty trajectory".into()));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(AnalysisError::Contract(format!("threshold {x} outside [0, 1]")));
    }
    let found = (0..traj.steps.len())
        .rev()
        .find(|&i| traj.steps[i].relative_performance >= x);
    let (heads, step) = match found {
        Some(i) => (traj.retained_after(i), i),
        None => (traj.all_units(), 0),
    };
    Ok(SelectedHeads {
        heads,
        task: traj.task.clone(),
        threshold: x,
        trajectory: traj.model_id.clone(),
        step,
    })
}

/// `|Hp ∩ Hd| / |Hd|`
pub fn recall(hp: &HeadSet, hd: &HeadSet) -> Result<f64, AnalysisError> {
    if hd.is_empty() {
        return Err(AnalysisError::Contract("recall against an empty head set".into()));
    }
    Ok(hp.intersection(hd).count() as f64 / hd.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub task: String,
    pub downstream_threshold: f64,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `per_seed[s][i]` is the recall of seed `s` at `grid[i]`.
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation across seeds.
    pub std: Vec<f64>,
}

/// Relative-performance values realized by the given trajectories, clamped
/// to `[0, 1]`, sorted and deduplicated.
pub fn realized_grid(trajs: &[PruneTrajectory]) -> Vec<f64> {
    let mut xs: Vec<f64> = trajs
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.relative_performance.clamp(0.0, 1.0)))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Recall of pre-train head sets `H_x` against each downstream `H_0.9`.
///
/// `pretrain[s]` and `downstream[s]` are paired by seed. Without `grid` the
/// x values realized by the pre-train trajectories are used.
pub fn recall_curve(
    pretrain: &[PruneTrajectory],
    downstream: &[PruneTrajectory],
    grid: Option<&[f64]>,
) -> Result<RecallCurve, AnalysisError> {
    if pretrain.is_empty() || pretrain.len() != downstream.len() {
        return Err(AnalysisError::Contract(format!(
            "{} pre-train trajectories for {} downstream",
            pretrain.len(),
            downstream.len()
        )));
    }
    for (p, d) in pretrain.iter().zip(downstream) {
        if (p.n_rows, p.n_heads) != (d.n_rows, d.n_heads) {
            return Err(AnalysisError::Geometry(format!(
                "trajectory {} is {}x{}, {} is {}x{}",
                p.model_id, p.n_rows, p.n_heads, d.model_id, d.n_rows, d.n_heads
            )));
        }
    }
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => realized_grid(pretrain),
    };
    let per_seed: Vec<Vec<f64>> = pretrain
        .iter()
        .zip(downstream)
        .map(|(p, d)| {
            let hd = head_set_at_performance(d, DOWNSTREAM_THRESHOLD)?.heads;
            grid.iter()
                .map(|&x| recall(&head_set_at_performance(p, x)?.heads, &hd))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let n = per_seed.len() as f64;
    let mean: Vec<f64> = (0..grid.len())
        .map(|i| per_seed.iter().map(|r| r[i]).sum::<f64>() / n)
        .collect();
    let std = (0..grid.len())
        .map(|i| (per_seed.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(RecallCurve {
        task: downstream[0].task.clone(),
        downstream_threshold: DOWNSTREAM_THRESHOLD,
        grid,
        seeds: pretrain.iter().map(|t| t.seed).collect(),
        per_seed,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::{NormMode, PruneStep, SweepMode};

    pub(crate) fn trajectory(rows: usize, heads: usize, steps: &[(f64, Vec<HeadId>)]) -> PruneTrajectory {
        let total = rows * heads;
        let mut live = total;
        let steps = steps
            .iter()
            .enumerate()
            .map(|(i, (rel, pruned))| {
                live -= pruned.len();
                PruneStep {
                    step: i,
                    pruned: pruned.clone(),
                    pruned_ratio: (total - live) as f64 / total as f64,
                    retained_heads: live,
                    metric: *rel,
                    relative_performance: *rel,
                }
            })
            .collect();
        PruneTrajectory {
            model_id: "t".into(),
            task: "toy".into(),
            importance_task: "toy".into(),
            seed: 0,
            norm: NormMode::L1,
            mode: SweepMode::Iterative,
            shared: false,
            metric_name: "accuracy".into(),
            full_metric: 1.0,
            n_rows: rows,
            n_heads: heads,
            steps,
        }
    }

    fn h(l: usize, j: usize) -> HeadId {
        HeadId::new(l, j)
    }

    #[test]
    fn recall_hand_example() {
        let hp: HeadSet = [h(0, 0), h(0, 1)].into();
        let hd: HeadSet = [h(0, 1), h(1, 0), h(1, 1)].into();
        assert_eq!(recall(&hp, &hd).unwrap(), 1.0 / 3.0);
        assert_eq!(recall(&hd, &hd).unwrap(), 1.0);
        assert!(recall(&hp, &HeadSet::new()).is_err());
    }

    #[test]
    fn threshold_scan_picks_latest_qualifying_step() {
        let t = trajectory(
            2,
            2,
            &[(1.0, vec![]), (0.92, vec![h(0, 0), h(1, 1)]), (0.70, vec![h(0, 1)]), (0.1, vec![h(1, 0)])],
        );
        let at = |x| head_set_at_performance(&t, x).unwrap();
        assert_eq!(at(0.9).heads, [h(0, 1), h(1, 0)].into());
        assert_eq!(at(0.0).heads, HeadSet::new());
        assert_eq!(at(1.0).heads, t.all_units());
        assert!(head_set_at_performance(&t, 1.5).is_err());
    }

    #[test]
    fn non_monotone_trajectory_scans_from_the_end() {
        let t = trajectory(1, 3, &[(1.0, vec![]), (0.8, vec![h(0, 0)]), (0.95, vec![h(0, 1)]), (0.0, vec![h(0, 2)])]);
        let s = head_set_at_performance(&t, 0.9).unwrap();
        assert_eq!(s.step, 2);
        assert_eq!(s.heads, [h(0, 2)].into());
    }

    #[test]
    fn identical_trajectories_recall_one_at_threshold() {
        let t = trajectory(1, 4, &[(1.0, vec![]), (0.95, vec![h(0, 3)]), (0.5, vec![h(0, 0), h(0, 1)]), (0.2, vec![h(0, 2)])]);
        let c = recall_curve(&[t.clone()], &[t], Some(&[DOWNSTREAM_THRESHOLD, 1.0])).unwrap();
        assert_eq!(c.mean, vec![1.0, 1.0]);
        assert_eq!(c.std, vec![0.0, 0.0]);
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let a = trajectory(1, 2, &[(1.0, vec![])]);
        let b = trajectory(2, 2, &[(1.0, vec![])]);
        assert!(matches!(recall_curve(&[a], &[b], None), Err(AnalysisError::Geometry(_))));
    }
}
