//! Renders a pruning chart directly and then the full report for a tiny
//! CLI run.

use headlab::cli;
use headlab::io::svg::{Band, Chart, Series};

const CONFIG: &str = r#"{
  "model": {"n_layers": 2, "n_heads": 2, "d_model": 16, "d_head": 8, "d_ff": 32},
  "corpus": {"n_train": 120, "n_dev": 30, "task_train": 120, "task_dev": 30},
  "pretrain": {"steps": 10, "batch_size": 8, "eval_examples": 20},
  "finetune": {"steps": 10, "batch_size": 8},
  "seeds": [0, 1],
  "tasks": [{"name": "polarity"}],
  "importance": {"max_examples": 16},
  "sweep": {"step_fraction": 0.25, "importance": {"max_examples": 16}, "eval": {"max_examples": 20}},
  "compare_examples": 12
}"#;

fn main() {
    let dir = std::env::temp_dir().join("headlab_report_example");
    std::fs::create_dir_all(&dir).expect("dir");

    let mut chart = Chart::new("pruning", "fraction pruned", "relative performance");
    for (seed, drop) in [0.1, 0.2].into_iter().enumerate() {
        chart.lines.push(Series {
            label: format!("seed {seed}"),
            points: (0..=4).map(|i| (i as f64 / 4.0, 1.0 - drop * i as f64)).collect(),
            dotted: true,
            color: 0,
        });
    }
    chart.bands.push(Band {
        points: (0..=4).map(|i| (i as f64 / 4.0, 1.0 - 0.2 * i as f64, 1.0 - 0.1 * i as f64)).collect(),
        color: 0,
    });
    std::fs::write(dir.join("hand_made.svg"), chart.render()).expect("write");

    let config = dir.join("config.json");
    std::fs::write(&config, CONFIG).expect("config");
    let run = |args: &[&str]| {
        let mut full = vec!["headlab".to_string()];
        full.extend(args.iter().map(|s| s.to_string()));
        assert_eq!(cli::run(full), 0, "{args:?}");
    };
    let (c, out) = (config.to_string_lossy().into_owned(), dir.join("run").to_string_lossy().into_owned());
    run(&["walkthrough", "--config", &c, "--out", &out]);
    run(&["report", "--dir", &out]);
    for entry in std::fs::read_dir(dir.join("run").join("report")).expect("report dir") {
        println!("{}", entry.expect("entry").path().display());
    }
}
