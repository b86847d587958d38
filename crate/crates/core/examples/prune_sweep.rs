//! Iterative and one-shot pruning sweeps, compared with random pruning.

use headlab::importance::{prune_sweep, random_prunings, EvalSettings, ImportanceOptions, NormMode, SweepConfig, SweepMode};
use headlab::tasks::{finetune, synth_corpus, CorpusSpec, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn main() {
    let spec = CorpusSpec {
        grammar: GrammarSpec::default(),
        task: SynthTask::Topic,
        n_train: 400,
        n_dev: 150,
    };
    let data = synth_corpus(3, &spec).expect("corpus");
    let mut cfg = ModelConfig::tiny(2, 4, 8, data.vocab.len());
    cfg.max_seq_len = data.max_len();
    let base = Transformer::new(cfg, 3).expect("model");
    let train = TrainConfig {
        steps: 200,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (model, report) = finetune(&base, &data, &train, 0, 3).expect("finetune");
    println!("topic accuracy {:.3}", report.dev_metric);

    let eval = EvalSettings::default();
    for mode in [SweepMode::Iterative, SweepMode::OneShot] {
        let sweep = SweepConfig {
            mode,
            step_fraction: 0.125,
            norm: NormMode::L1,
            importance: ImportanceOptions {
                max_examples: Some(128),
                ..ImportanceOptions::default()
            },
            eval: eval.clone(),
        };
        let traj = prune_sweep(&model, &data, &data, &sweep, "topic").expect("sweep");
        println!("{} sweep:", mode.name());
        for s in &traj.steps {
            let pruned: Vec<String> = s.pruned.iter().map(|h| h.to_string()).collect();
            println!("  {:.3} pruned  rel {:.3}  [{}]", s.pruned_ratio, s.relative_performance, pruned.join(" "));
        }
    }
    let random = random_prunings(&model, &data, 4, 10, 0, &eval).expect("random");
    let mean = random.iter().sum::<f64>() / random.len() as f64;
    println!("random pruning of half the heads: mean rel {mean:.3}");
}
