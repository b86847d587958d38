//! Attention divergence and feature distance between a pre-trained encoder
//! and its fine-tuned copy, and their correlation with head importance.

use headlab::analysis::{attention_divergence, feature_distance, importance_divergence_correlation};
use headlab::importance::{estimate_importance, normalize_importance, ImportanceOptions, NormMode};
use headlab::tasks::{finetune, pretrain, synth_corpus, CorpusSpec, Dataset, GrammarSpec, SynthTask, TrainConfig};
use headlab::transformer::{ModelConfig, Transformer};

fn corpus(task: SynthTask) -> Dataset {
    let spec = CorpusSpec {
        grammar: GrammarSpec::default(),
        task,
        n_train: 500,
        n_dev: 80,
    };
    synth_corpus(5, &spec).expect("corpus")
}

fn main() {
    let mlm = corpus(SynthTask::MaskedLm);
    let topic = corpus(SynthTask::Topic);
    let mut cfg = ModelConfig::tiny(3, 4, 8, mlm.vocab.len());
    cfg.max_seq_len = 48;
    let mut base = Transformer::new(cfg, 5).expect("model");
    let train = TrainConfig {
        steps: 100,
        batch_size: 16,
        ..TrainConfig::default()
    };
    pretrain(&mut base, &mlm, &train, 5).expect("pretrain");
    let (tuned, _) = finetune(&base, &topic, &train, 0, 5).expect("finetune");

    let div = attention_divergence(&base, &tuned, &topic.dev).expect("divergence");
    let dist = feature_distance(&base, &tuned, &topic.dev).expect("distance");
    for l in 0..div.n_layers {
        let row: Vec<String> = (0..div.n_heads).map(|h| format!("{:.4}", div.mean_at(l, h))).collect();
        println!("layer {l}: JS {}  L2 {:.3}", row.join(" "), dist.mean[l]);
    }
    let self_div = attention_divergence(&tuned, &tuned, &topic.dev).expect("divergence");
    println!("self-comparison max JS {:e}", self_div.max.iter().fold(0.0f64, |a, &b| a.max(b)));

    let opts = ImportanceOptions {
        max_examples: Some(128),
        ..ImportanceOptions::default()
    };
    let imp = normalize_importance(&estimate_importance(&tuned, &topic, false, &opts).expect("importance"), NormMode::L1);
    let c = importance_divergence_correlation(&imp, &div).expect("correlation");
    println!("importance vs divergence: pearson {:?}, spearman {:?}", c.pearson_r, c.spearman_rho);
}
