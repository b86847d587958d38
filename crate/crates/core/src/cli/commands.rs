use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::{CliError, CommonArgs, CompareArgs, FinetuneArgs, ImportanceArgs, PretrainArgs, PruneArgs, RecallArgs};
use crate::analysis::{attention_divergence, feature_distance, importance_divergence_correlation, recall_curve};
use crate::importance::{
    estimate_importance, normalize_importance, prune_sweep, NormMode, PruneTrajectory, SweepMode,
};
use crate::io::tables::{
    correlation_rows, distance_rows, divergence_rows, importance_from_rows, importance_rows, read_rows,
    recall_rows, trajectory_rows, write_rows,
};
use crate::io::{read_json, sha256_file, write_json, Checkpoint, Manifest, Provenance};
use crate::tasks::text::{load_classification, load_text_corpus};
use crate::tasks::{finetune, pretrain, synth_corpus, CorpusSpec, Dataset, SynthTask, Vocab};
use crate::transformer::Transformer;

/// Loads the config named by `common` and resolves the output directory.
pub(crate) fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

pub(crate) fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn manifest_for(command: &str, args: &impl Serialize, cfg: &RunConfig, common: &CommonArgs) -> Result<Manifest, CliError> {
    let echo = serde_json::json!({ "args": args, "config": cfg });
    let mut m = Manifest::new(command, &echo, &cfg.output_dir);
    if let Some(c) = &common.config {
        m.input(c)?;
    }
    Ok(m)
}

pub(crate) fn seed_list(cfg: &RunConfig, n: Option<u64>) -> Vec<u64> {
    n.map_or_else(|| cfg.seeds.clone(), |n| (0..n).collect())
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("checkpoint")
        .to_string()
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

/// The masked-LM pre-training corpus.
pub fn pretrain_corpus(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let c = &cfg.corpus;
    match &c.text {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::config(format!("corpus {} does not exist", path.display())));
            }
            Ok(load_text_corpus(path, cfg.model.max_seq_len, c.min_freq, c.dev_every)?)
        }
        None => Ok(synth_corpus(
            c.data_seed,
            &CorpusSpec {
                grammar: c.grammar.clone(),
                task: SynthTask::MaskedLm,
                n_train: c.n_train,
                n_dev: c.n_dev,
            },
        )?),
    }
}

/// Dataset for `name` encoded for a model with vocabulary `vocab`. `mlm`
/// names the pre-training corpus.
pub fn task_dataset(cfg: &RunConfig, name: &str, vocab: &Vocab, max_len: usize) -> Result<Dataset, CliError> {
    let data = if name == SynthTask::MaskedLm.name() {
        pretrain_corpus(cfg)?
    } else {
        let source = cfg.task(name)?;
        let spec = source.spec()?;
        match &source.path {
            Some(path) => {
                if !path.exists() {
                    return Err(CliError::config(format!("task file {} does not exist", path.display())));
                }
                load_classification(path, spec, vocab, max_len, cfg.corpus.dev_every)?
            }
            None => {
                let task = SynthTask::parse(name).expect("validated synthetic task");
                let stream = SynthTask::DOWNSTREAM.iter().position(|t| *t == task).unwrap_or(0) as u64;
                synth_corpus(
                    cfg.corpus.data_seed.wrapping_add(1 + stream),
                    &CorpusSpec {
                        grammar: cfg.corpus.grammar.clone(),
                        task,
                        n_train: cfg.corpus.task_train,
                        n_dev: cfg.corpus.task_dev,
                    },
                )?
            }
        }
    };
    if &data.vocab != vocab {
        return Err(CliError::geometry(format!(
            "task {name} uses a {}-token vocabulary that differs from the checkpoint's {}-token one",
            data.vocab.len(),
            vocab.len()
        )));
    }
    Ok(data)
}

pub fn checkpoint_name(stage: &str, seed: u64) -> String {
    format!("{stage}_seed{seed}.hprn")
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.steps {
        cfg.pretrain.steps = s;
    }
    if let Some(p) = &args.corpus {
        cfg.corpus.text = Some(p.clone());
    }
    cfg.seeds = seed_list(&cfg, args.seeds);
    cfg.validate()?;
    let corpus = pretrain_corpus(&cfg)?;
    let out = prepare_out(&cfg)?;
    let mut manifest = manifest_for("pretrain", args, &cfg, &args.common)?;
    if let Some(p) = &cfg.corpus.text {
        manifest.input(p)?;
    }
    let model_cfg = cfg.model.model_config(corpus.vocab.len());
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("pretrain seed {seed}: {} steps", cfg.pretrain.steps);
        let mut model = Transformer::new(model_cfg.clone(), seed)?;
        let report = pretrain(&mut model, &corpus, &cfg.pretrain, seed)?;
        let ckpt = Checkpoint::new(
            model,
            corpus.vocab.clone(),
            Provenance {
                stage: "pretrain".into(),
                seed,
                steps: cfg.pretrain.steps,
                task: Some(corpus.spec.clone()),
                parent: None,
                dev_metric: Some(report.final_recall),
            },
        );
        let path = out.join(checkpoint_name("pretrain", seed));
        ckpt.save(&path)?;
        let metrics = out.join(format!("pretrain_seed{seed}.metrics.json"));
        write_json(&metrics, &report)?;
        for p in [path, metrics] {
            manifest.output(&p)?;
            written.push(p);
        }
    }
    manifest.write(&out.join("pretrain.manifest.json"))?;
    Ok(written)
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.steps {
        cfg.finetune.steps = s;
    }
    cfg.seeds = seed_list(&cfg, args.seeds);
    cfg.validate()?;
    cfg.task(&args.task)?;
    let out = prepare_out(&cfg)?;
    let mut manifest = manifest_for("finetune", args, &cfg, &args.common)?;
    let mut written = Vec::new();
    let tag = if args.freeze > 0 {
        format!("{}_freeze{}", args.task, args.freeze)
    } else {
        args.task.clone()
    };
    for &seed in &cfg.seeds {
        let base_path = PathBuf::from(args.base.replace("{seed}", &seed.to_string()));
        let base = load_checkpoint(&base_path)?;
        manifest.input(&base_path)?;
        let data = task_dataset(&cfg, &args.task, &base.vocab, base.model.config.max_seq_len)?;
        log::info!("finetune {} seed {seed} (frozen {})", args.task, args.freeze);
        let (model, report) = finetune(&base.model, &data, &cfg.finetune, args.freeze, seed)?;
        let ckpt = Checkpoint::new(
            model,
            base.vocab.clone(),
            Provenance {
                stage: "finetune".into(),
                seed,
                steps: cfg.finetune.steps,
                task: Some(data.spec.clone()),
                parent: Some(sha256_file(&base_path)?),
                dev_metric: Some(report.dev_metric),
            },
        );
        let path = out.join(checkpoint_name(&tag, seed));
        ckpt.save(&path)?;
        let metrics = out.join(format!("{tag}_seed{seed}.metrics.json"));
        write_json(&metrics, &report)?;
        for p in [path, metrics] {
            manifest.output(&p)?;
            written.push(p);
        }
    }
    manifest.write(&out.join(format!("finetune_{tag}.manifest.json")))?;
    Ok(written)
}

fn parse_norms(s: &str) -> Result<Vec<NormMode>, CliError> {
    if s == "all" {
        return Ok(NormMode::ALL.to_vec());
    }
    NormMode::parse(s)
        .map(|n| vec![n])
        .ok_or_else(|| CliError::config(format!("unknown norm {s:?} (l1, l2, none, all)")))
}

pub fn cmd_importance(args: &ImportanceArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.max_examples {
        cfg.importance.max_examples = Some(n);
    }
    cfg.validate()?;
    let norms = parse_norms(&args.norm)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = task_dataset(&cfg, &args.task, &ckpt.vocab, ckpt.model.config.max_seq_len)?;
    let out = prepare_out(&cfg)?;
    let mut manifest = manifest_for("importance", args, &cfg, &args.common)?;
    manifest.input(&args.checkpoint)?;
    let mut opts = cfg.importance.clone();
    opts.seed = ckpt.provenance.seed;
    let shared = args.shared || ckpt.model.config.share_params;
    let table = estimate_importance(&ckpt.model, &data, shared, &opts)?;
    let name = format!("{}_{}", stem(&args.checkpoint), args.task);
    let mut written = Vec::new();
    for norm in norms {
        let t = normalize_importance(&table, norm);
        if !t.zero_rows.is_empty() {
            log::warn!("{name}: rows {:?} are all zero and were left unnormalized", t.zero_rows);
        }
        let path = out.join(format!("importance_{name}_{}.csv", norm.name()));
        write_rows(&path, &importance_rows(&t))?;
        manifest.output(&path)?;
        written.push(path);
    }
    manifest.write(&out.join(format!("importance_{name}.manifest.json")))?;
    Ok(written)
}

pub fn trajectory_name(t: &PruneTrajectory) -> String {
    format!("trajectory_{}_{}_{}_{}", t.model_id, t.task, t.norm.name(), t.mode.name())
}

pub fn cmd_prune(args: &PruneArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = &args.norm {
        cfg.sweep.norm = NormMode::parse(n).ok_or_else(|| CliError::config(format!("unknown norm {n:?}")))?;
    }
    if let Some(m) = &args.mode {
        cfg.sweep.mode = match m.as_str() {
            "iterative" => SweepMode::Iterative,
            "one-shot" | "one_shot" => SweepMode::OneShot,
            _ => return Err(CliError::config(format!("unknown mode {m:?} (iterative, one-shot)"))),
        };
    }
    if let Some(f) = args.step_fraction {
        cfg.sweep.step_fraction = f;
    }
    cfg.validate()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let max_len = ckpt.model.config.max_seq_len;
    let eval = task_dataset(&cfg, &args.task, &ckpt.vocab, max_len)?;
    let imp_task = args.importance_task.as_deref().unwrap_or(&args.task);
    let imp = if imp_task == args.task {
        eval.clone()
    } else {
        task_dataset(&cfg, imp_task, &ckpt.vocab, max_len)?
    };
    let out = prepare_out(&cfg)?;
    let mut manifest = manifest_for("prune", args, &cfg, &args.common)?;
    manifest.input(&args.checkpoint)?;
    let mut sweep = cfg.sweep.clone();
    sweep.importance.seed = ckpt.provenance.seed;
    log::info!("prune {} on {} ({}, {})", stem(&args.checkpoint), args.task, sweep.norm.name(), sweep.mode.name());
    let mut traj = prune_sweep(&ckpt.model, &eval, &imp, &sweep, &stem(&args.checkpoint))?;
    traj.seed = ckpt.provenance.seed;
    let name = trajectory_name(&traj);
    let csv = out.join(format!("{name}.csv"));
    let json = out.join(format!("{name}.json"));
    write_rows(&csv, &trajectory_rows(&traj))?;
    write_json(&json, &traj)?;
    for p in [&csv, &json] {
        manifest.output(p)?;
    }
    manifest.write(&out.join(format!("{name}.manifest.json")))?;
    Ok(vec![csv, json])
}

fn read_trajectories(paths: &[PathBuf]) -> Result<Vec<PruneTrajectory>, CliError> {
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(CliError::config(format!("trajectory {} does not exist", p.display())));
            }
            Ok(read_json(p)?)
        })
        .collect()
}

pub fn cmd_recall(args: &RecallArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(&args.common)?;
    let mut pre = read_trajectories(&args.pretrain)?;
    let mut down = read_trajectories(&args.downstream)?;
    if pre.len() != down.len() {
        return Err(CliError::config(format!(
            "{} pre-train trajectories for {} downstream ones",
            pre.len(),
            down.len()
        )));
    }
    let task = down[0].task.clone();
    if down.iter().any(|t| t.task != task) {
        return Err(CliError::config("downstream trajectories mix tasks"));
    }
    let seeds = |ts: &[PruneTrajectory]| {
        let mut s: Vec<u64> = ts.iter().map(|t| t.seed).collect();
        s.sort_unstable();
        s
    };
    if seeds(&pre) == seeds(&down) {
        pre.sort_by_key(|t| t.seed);
        down.sort_by_key(|t| t.seed);
    }
    let curve = recall_curve(&pre, &down, None)?;
    let out = prepare_out(&cfg)?;
    let mut manifest = manifest_for("recall", args, &cfg, &args.common)?;
    for p in args.pretrain.iter().chain(&args.downstream) {
        manifest.input(p)?;
    }
    let csv = out.join(format!("recall_{task}.csv"));
    let json = out.join(format!("recall_{task}.json"));
    write_rows(&csv, &recall_rows(&curve))?;
    write_json(&json, &curve)?;
    for p in [&csv, &json] {
        manifest.output(p)?;
    }
    manifest.write(&out.join(format!("recall_{task}.manifest.json")))?;
    Ok(vec![csv, json])
}

/// Sidecar describing one comparison, used to group report charts.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CompareInfo {
    pub a: String,
    pub b: String,
    pub task: String,
    pub n_examples: usize,
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(&args.common)?;
    cfg.validate()?;
    let a = load_checkpoint(&args.a)?;
    let b = load_checkpoint(&args.b)?;
    if !a.model.config.same_geometry(&b.model.config) || a.vocab != b.vocab {
        return Err(CliError::geometry(format!(
            "{} and {} do not share geometry and vocabulary",
            args.a.display(),
            args.b.display()
        )));
    }
    let data = task_dataset(&cfg, &args.task, &a.vocab, a.model.config.max_seq_len)?;
    let dev = Dataset::subsample(&data.dev, cfg.compare_examples, cfg.corpus.data_seed);
    let out = prepare_out(&cfg)?;
    let mut manifest = manifest_for("compare", args, &cfg, &args.common)?;
    manifest.input(&args.a)?;
    manifest.input(&args.b)?;
    log::info!("compare {} vs {} on {}", stem(&args.a), stem(&args.b), args.task);
    let div = attention_divergence(&a.model, &b.model, &dev)?;
    let dist = feature_distance(&a.model, &b.model, &dev)?;
    let importance = match &args.importance {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::config(format!("importance file {} does not exist", p.display())));
            }
            manifest.input(p)?;
            importance_from_rows(&read_rows(p)?, false)?
        }
        None => {
            let mut opts = cfg.importance.clone();
            opts.seed = b.provenance.seed;
            let t = estimate_importance(&b.model, &data, b.model.config.share_params, &opts)?;
            normalize_importance(&t, NormMode::L1)
        }
    };
    let corr = importance_divergence_correlation(&importance, &div)?;
    if corr.pearson_r.is_none() {
        log::warn!("correlation undefined: importance or divergence is constant across heads");
    }
    let pair = format!("{}_vs_{}", stem(&args.a), stem(&args.b));
    let files = [
        out.join(format!("divergence_{pair}.csv")),
        out.join(format!("distance_{pair}.csv")),
        out.join(format!("correlation_{pair}.csv")),
        out.join(format!("compare_{pair}.json")),
    ];
    write_rows(&files[0], &divergence_rows(&div))?;
    write_rows(&files[1], &distance_rows(&dist))?;
    write_rows(&files[2], &correlation_rows(&corr))?;
    write_json(
        &files[3],
        &CompareInfo {
            a: stem(&args.a),
            b: stem(&args.b),
            task: args.task.clone(),
            n_examples: dev.len(),
            pearson_r: corr.pearson_r,
            spearman_rho: corr.spearman_rho,
        },
    )?;
    for p in &files {
        manifest.output(p)?;
    }
    manifest.write(&out.join(format!("compare_{pair}.manifest.json")))?;
    Ok(files.to_vec())
}
