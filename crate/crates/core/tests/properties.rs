use headlab::analysis::correlation::linear_fit;
use headlab::analysis::{head_set_at_performance, js_divergence, pearson, recall, spearman, HeadSet};
use headlab::importance::{normalize_importance, rank_heads, ImportanceTable, NormMode, PruneStep, PruneTrajectory, SweepMode};
use headlab::transformer::HeadId;
use proptest::prelude::*;

fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, n).prop_filter("nonzero mass", |v| v.iter().sum::<f64>() > 1e-9)
}

fn head_set(l: usize, h: usize) -> impl Strategy<Value = HeadSet> {
    proptest::collection::vec(any::<bool>(), l * h).prop_map(move |bits| {
        bits.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| HeadId::new(i / h, i % h))
            .collect()
    })
}

fn trajectory(order: Vec<usize>, rel: Vec<f64>, l: usize, h: usize) -> PruneTrajectory {
    let all: Vec<HeadId> = (0..l * h).map(|i| HeadId::new(i / h, i % h)).collect();
    let mut steps = vec![PruneStep {
        step: 0,
        pruned: Vec::new(),
        pruned_ratio: 0.0,
        retained_heads: all.len(),
        metric: 1.0,
        relative_performance: 1.0,
    }];
    for (i, (&k, &r)) in order.iter().zip(&rel).enumerate() {
        steps.push(PruneStep {
            step: i + 1,
            pruned: vec![all[k]],
            pruned_ratio: (i + 1) as f64 / all.len() as f64,
            retained_heads: all.len() - i - 1,
            metric: r,
            relative_performance: r,
        });
    }
    PruneTrajectory {
        model_id: "m".into(),
        task: "t".into(),
        importance_task: "t".into(),
        seed: 0,
        norm: NormMode::L1,
        mode: SweepMode::Iterative,
        shared: false,
        metric_name: "accuracy".into(),
        full_metric: 1.0,
        n_rows: l,
        n_heads: h,
        steps,
    }
}

fn monotone_trajectory() -> impl Strategy<Value = PruneTrajectory> {
    (1usize..4, 1usize..4).prop_flat_map(|(l, h)| {
        let n = l * h;
        (
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            proptest::collection::vec(0.0f64..1.0, n),
        )
            .prop_map(move |(order, mut rel)| {
                rel.sort_by(|a, b| b.total_cmp(a));
                trajectory(order, rel, l, h)
            })
    })
}

proptest! {
    #[test]
    fn js_symmetric_bounded_and_zero_on_self((p, q) in (2usize..12).prop_flat_map(|n| (dist(n), dist(n)))) {
        let a = js_divergence(&p, &q).unwrap();
        prop_assert_eq!(a.to_bits(), js_divergence(&q, &p).unwrap().to_bits());
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&a));
        prop_assert!(js_divergence(&p, &p).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn recall_monotone_under_inclusion(hp in head_set(3, 4), extra in head_set(3, 4), hd in head_set(3, 4)) {
        prop_assume!(!hd.is_empty());
        let bigger: HeadSet = hp.union(&extra).copied().collect();
        prop_assert!(recall(&hp, &hd).unwrap() <= recall(&bigger, &hd).unwrap());
    }

    #[test]
    fn recall_in_unit_interval(hp in head_set(2, 5), hd in head_set(2, 5)) {
        prop_assume!(!hd.is_empty());
        let r = recall(&hp, &hd).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        if hd.is_subset(&hp) {
            prop_assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn head_set_grows_with_threshold(traj in monotone_trajectory(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = head_set_at_performance(&traj, lo).unwrap().heads;
        let s_hi = head_set_at_performance(&traj, hi).unwrap().heads;
        prop_assert!(s_lo.is_subset(&s_hi));
    }

    #[test]
    fn pearson_invariant_under_positive_affine_maps(
        xy in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
        c in 0.1f64..10.0,
        d in -5.0f64..5.0,
    ) {
        let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
        let Ok(r) = pearson(&x, &y) else { return Ok(()) };
        let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let y2: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        prop_assert!((pearson(&x2, &y2).unwrap() - r).abs() < 1e-9);
        prop_assert!((spearman(&x2, &y2).unwrap() - spearman(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_exact_lines(x in proptest::collection::vec(-10.0f64..10.0, 3..20), m in -3.0f64..3.0, k in -3.0f64..3.0) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
        let y: Vec<f64> = x.iter().map(|v| m * v + k).collect();
        let (slope, intercept) = linear_fit(&x, &y).unwrap();
        prop_assert!((slope - m).abs() < 1e-8 && (intercept - k).abs() < 1e-8);
    }

    #[test]
    fn normalization_properties(
        (rows, heads, raw) in (1usize..5, 1usize..7).prop_flat_map(|(r, h)| {
            (Just(r), Just(h), proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..3.0], r * h))
        }),
    ) {
        let table = ImportanceTable::from_raw(rows, heads, false, raw).unwrap();
        for mode in NormMode::ALL {
            let t = normalize_importance(&table, mode);
            for r in 0..rows {
                let row = t.row(r);
                if table.raw_row(r).iter().all(|&v| v == 0.0) {
                    prop_assert!(row.iter().all(|&v| v == 0.0));
                    continue;
                }
                match mode {
                    NormMode::L1 => prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9),
                    NormMode::L2 => prop_assert!((row.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9),
                    NormMode::None => prop_assert_eq!(row, table.raw_row(r)),
                }
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn rank_matches_brute_force_sort(
        (rows, heads, raw) in (1usize..4, 1usize..6).prop_flat_map(|(r, h)| {
            (Just(r), Just(h), proptest::collection::vec(prop_oneof![Just(0.5), 0.0f64..1.0], r * h))
        }),
    ) {
        let t = normalize_importance(&ImportanceTable::from_raw(rows, heads, false, raw).unwrap(), NormMode::None);
        let mut brute: Vec<(f64, usize, usize)> = (0..rows)
            .flat_map(|l| (0..heads).map(move |h| (l, h)))
            .map(|(l, h)| (t.normalized_at(HeadId::new(l, h)), l, h))
            .collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let want: Vec<HeadId> = brute.iter().map(|&(_, l, h)| HeadId::new(l, h)).collect();
        prop_assert_eq!(rank_heads(&t), want);
    }
}
