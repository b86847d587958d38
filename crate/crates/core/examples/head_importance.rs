//! Gate-gradient head importance under each normalization, shared and unshared.

use headlab::importance::{estimate_importance, normalize_importance, rank_heads, ImportanceOptions, NormMode};
use headlab::tasks::{finetune, synth_corpus, CorpusSpec, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn main() {
    let spec = CorpusSpec {
        grammar: GrammarSpec::default(),
        task: SynthTask::Polarity,
        n_train: 400,
        n_dev: 100,
    };
    let data = synth_corpus(2, &spec).expect("corpus");
    let opts = ImportanceOptions {
        max_examples: Some(128),
        ..ImportanceOptions::default()
    };
    let train = TrainConfig {
        steps: 120,
        batch_size: 16,
        ..TrainConfig::default()
    };

    for shared in [false, true] {
        let mut cfg = ModelConfig::tiny(3, 4, 8, data.vocab.len()).shared(shared);
        cfg.max_seq_len = data.max_len();
        let base = Transformer::new(cfg, 2).expect("model");
        let (model, report) = finetune(&base, &data, &train, 0, 2).expect("finetune");
        println!("shared={shared}: dev accuracy {:.3}", report.dev_metric);

        let raw = estimate_importance(&model, &data, shared, &opts).expect("importance");
        for mode in NormMode::ALL {
            let t = normalize_importance(&raw, mode);
            for r in 0..t.n_rows {
                let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:.4}")).collect();
                println!("  {:<4} row {r}: {}", mode.name(), row.join(" "));
            }
        }
        let order: Vec<String> = rank_heads(&normalize_importance(&raw, NormMode::L1))
            .iter()
            .map(|h| h.to_string())
            .collect();
        println!("  least to most important: {}", order.join(" "));
    }
}
