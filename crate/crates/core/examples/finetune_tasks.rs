//! Fine-tunes one pre-trained encoder on each synthetic downstream task.

use headlab::tasks::{finetune, pretrain, synth_corpus, CorpusSpec, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn corpus(task: SynthTask, n_train: usize) -> headlab::tasks::Dataset {
    let spec = CorpusSpec {
        grammar: GrammarSpec::default(),
        task,
        n_train,
        n_dev: 100,
    };
    synth_corpus(1, &spec).expect("corpus")
}

fn main() {
    let mlm = corpus(SynthTask::MaskedLm, 600);
    let mut cfg = ModelConfig::tiny(2, 4, 8, mlm.vocab.len());
    cfg.max_seq_len = 48;
    let mut base = Transformer::new(cfg, 1).expect("model");
    let short = TrainConfig {
        steps: 100,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let pre = pretrain(&mut base, &mlm, &short, 1).expect("pretrain");
    println!("pre-trained: Recall@1 {:.3}", pre.final_recall);

    for task in SynthTask::DOWNSTREAM {
        let data = corpus(task, 400);
        let (_, report) = finetune(&base, &data, &short, 0, 1).expect("finetune");
        println!(
            "{:<10} {:<10} {:.3} -> {:.3}",
            task.name(),
            format!("{:?}", data.spec.metric),
            report.initial_metric,
            report.dev_metric
        );
    }
}
