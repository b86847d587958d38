//! The whole pipeline with the default configuration: pre-training, four
//! fine-tuning tasks, importance, pruning sweeps, recall, comparison, freezing
//! and the report. Takes tens of minutes; pass `--small` for a quick run.

use std::time::Instant;

use headlab::cli::{cmd_walkthrough, CommonArgs};

const SMALL: &str = r#"{
  "model": {"n_layers": 2, "n_heads": 4, "d_model": 32, "d_head": 8, "d_ff": 64},
  "corpus": {"n_train": 400, "n_dev": 60, "task_train": 300, "task_dev": 60},
  "pretrain": {"steps": 60, "batch_size": 16, "eval_every": 0},
  "finetune": {"steps": 80, "batch_size": 16},
  "seeds": [0, 1],
  "importance": {"max_examples": 32},
  "compare_examples": 30
}"#;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let small = std::env::args().any(|a| a == "--small");
    let out = std::env::temp_dir().join("headlab_walkthrough_example");
    let config = small.then(|| {
        let p = std::env::temp_dir().join("headlab_walkthrough_small.json");
        std::fs::write(&p, SMALL).expect("config");
        p
    });
    let start = Instant::now();
    cmd_walkthrough(&CommonArgs {
        config,
        out: Some(out.clone()),
    })
    .unwrap_or_else(|e| panic!("walkthrough failed: {}", e.message));
    println!("finished in {:.0}s, artifacts in {}", start.elapsed().as_secs_f64(), out.display());
}
