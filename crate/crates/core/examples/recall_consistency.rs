//! Overlap between the heads that survive pruning on the pre-training
//! objective and those that survive pruning on a downstream task, over seeds.

use headlab::analysis::recall_curve;
use headlab::importance::{prune_sweep, ImportanceOptions, SweepConfig};
use headlab::tasks::{finetune, pretrain, synth_corpus, CorpusSpec, Dataset, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn corpus(task: SynthTask, n_train: usize) -> Dataset {
    let spec = CorpusSpec {
        grammar: GrammarSpec::default(),
        task,
        n_train,
        n_dev: 100,
    };
    synth_corpus(4, &spec).expect("corpus")
}

fn main() {
    let mlm = corpus(SynthTask::MaskedLm, 600);
    let topic = corpus(SynthTask::Topic, 400);
    let train = TrainConfig {
        steps: 100,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let sweep = SweepConfig {
        step_fraction: 0.125,
        importance: ImportanceOptions {
            max_examples: Some(64),
            ..ImportanceOptions::default()
        },
        ..SweepConfig::default()
    };

    let (mut pre, mut down) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let mut cfg = ModelConfig::tiny(2, 4, 8, mlm.vocab.len());
        cfg.max_seq_len = 48;
        let mut model = Transformer::new(cfg, seed).expect("model");
        pretrain(&mut model, &mlm, &train, seed).expect("pretrain");
        let mut p = prune_sweep(&model, &mlm, &mlm, &sweep, "pretrain").expect("sweep");
        p.seed = seed;
        let (tuned, _) = finetune(&model, &topic, &train, 0, seed).expect("finetune");
        let mut d = prune_sweep(&tuned, &topic, &topic, &sweep, "topic").expect("sweep");
        d.seed = seed;
        pre.push(p);
        down.push(d);
    }

    let curve = recall_curve(&pre, &down, None).expect("recall");
    println!("downstream head set at rel >= {}", curve.downstream_threshold);
    for (i, x) in curve.grid.iter().enumerate() {
        println!("  x {x:.3}  recall {:.3} ± {:.3}", curve.mean[i], curve.std[i]);
    }
}
