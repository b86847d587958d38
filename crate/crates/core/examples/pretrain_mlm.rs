//! Masked-LM pre-training of a small gated encoder on the synthetic corpus,
//! followed by a checkpoint round trip.
//!
//! `cargo run --release --example pretrain_mlm [STEPS]`

use headlab::io::{Checkpoint, Provenance};
use headlab::tasks::{pretrain, synth_corpus, CorpusSpec, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn main() {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let corpus = synth_corpus(
        0,
        &CorpusSpec {
            grammar: GrammarSpec::default(),
            task: SynthTask::MaskedLm,
            n_train: 800,
            n_dev: 100,
        },
    )
    .expect("corpus");
    let mut cfg = ModelConfig::tiny(2, 4, 8, corpus.vocab.len());
    cfg.max_seq_len = corpus.max_len();
    let mut model = Transformer::new(cfg, 0).expect("model");
    println!("{} parameters, vocabulary of {}", model.param_count(), corpus.vocab.len());

    let train = TrainConfig {
        steps,
        batch_size: 16,
        eval_every: steps / 5,
        ..TrainConfig::default()
    };
    let report = pretrain(&mut model, &corpus, &train, 0).expect("pretrain");
    for (step, r) in &report.recall_curve {
        println!("step {step:>4}  dev Recall@1 {r:.3}");
    }

    let path = std::env::temp_dir().join("headlab_pretrain_example.hprn");
    let provenance = Provenance {
        stage: "pretrain".into(),
        steps,
        dev_metric: Some(report.final_recall),
        ..Provenance::default()
    };
    Checkpoint::new(model.clone(), corpus.vocab.clone(), provenance).save(&path).expect("save");
    let back = Checkpoint::load(&path).expect("load");
    assert_eq!(back.model, model);
    println!("checkpoint written to {}", path.display());
}
