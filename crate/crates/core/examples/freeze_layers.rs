//! Fine-tuning with the lowest k layers frozen, relative to full fine-tuning.

use headlab::analysis::freeze_compare;
use headlab::tasks::{pretrain, synth_corpus, CorpusSpec, Dataset, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn corpus(task: SynthTask) -> Dataset {
    let spec = CorpusSpec {
        grammar: GrammarSpec::default(),
        task,
        n_train: 500,
        n_dev: 100,
    };
    synth_corpus(6, &spec).expect("corpus")
}

fn main() {
    let mlm = corpus(SynthTask::MaskedLm);
    let polarity = corpus(SynthTask::Polarity);
    let mut cfg = ModelConfig::tiny(3, 2, 8, mlm.vocab.len());
    cfg.max_seq_len = 48;
    let mut base = Transformer::new(cfg, 6).expect("model");
    let train = TrainConfig {
        steps: 100,
        batch_size: 16,
        ..TrainConfig::default()
    };
    pretrain(&mut base, &mlm, &train, 6).expect("pretrain");
    for k in 0..=base.config.n_layers {
        let c = freeze_compare(&base, &polarity, &train, k, 6).expect("freeze");
        println!(
            "k={k}: frozen {:.3}  unfrozen {:.3}  ratio {:.3}",
            c.frozen_metric, c.unfrozen_metric, c.ratio
        );
    }
}
