use std::path::PathBuf;

use super::commands::{
    checkpoint_name, cmd_compare, cmd_finetune, cmd_importance, cmd_pretrain, cmd_prune, cmd_recall, load_checkpoint,
    load_config, prepare_out, task_dataset,
};
use super::report::cmd_report;
use super::{CliError, CommonArgs, CompareArgs, FinetuneArgs, ImportanceArgs, PretrainArgs, PruneArgs, RecallArgs, ReportArgs};
use crate::analysis::freeze_compare;
use crate::io::{write_json, Manifest};
use crate::tasks::SynthTask;

fn trajectory_path(out: &std::path::Path, model_id: &str, task: &str, norm: &str, mode: &str) -> PathBuf {
    out.join(format!("trajectory_{model_id}_{task}_{norm}_{mode}.json"))
}

/// Runs pretrain, finetune, importance, prune, recall, compare, freeze and
/// report in order, all into one output directory.
pub fn cmd_walkthrough(args: &CommonArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load_config(args)?;
    cfg.validate()?;
    let out = prepare_out(&cfg)?;
    let common = CommonArgs {
        config: args.config.clone(),
        out: Some(out.clone()),
    };
    let mut written = cmd_pretrain(&PretrainArgs {
        common: common.clone(),
        ..PretrainArgs::default()
    })?;
    let base_template = out.join("pretrain_seed{seed}.hprn").to_string_lossy().into_owned();
    let mode = cfg.sweep.mode.name();
    let mlm = SynthTask::MaskedLm.name();
    for task in cfg.tasks.iter().map(|t| t.name.clone()) {
        written.extend(cmd_finetune(&FinetuneArgs {
            common: common.clone(),
            base: base_template.clone(),
            task: task.clone(),
            ..FinetuneArgs::default()
        })?);
        for &seed in &cfg.seeds {
            let ckpt = out.join(checkpoint_name(&task, seed));
            written.extend(cmd_importance(&ImportanceArgs {
                common: common.clone(),
                checkpoint: ckpt.clone(),
                task: task.clone(),
                norm: "all".into(),
                ..ImportanceArgs::default()
            })?);
            for norm in &cfg.sweep_norms {
                written.extend(cmd_prune(&PruneArgs {
                    common: common.clone(),
                    checkpoint: ckpt.clone(),
                    task: task.clone(),
                    norm: Some(norm.name().into()),
                    ..PruneArgs::default()
                })?);
            }
        }
    }
    for &seed in &cfg.seeds {
        written.extend(cmd_prune(&PruneArgs {
            common: common.clone(),
            checkpoint: out.join(checkpoint_name("pretrain", seed)),
            task: mlm.into(),
            norm: Some(cfg.sweep.norm.name().into()),
            ..PruneArgs::default()
        })?);
    }
    for task in cfg.tasks.iter().map(|t| t.name.clone()) {
        let norm = cfg.sweep.norm.name();
        let pretrain = cfg
            .seeds
            .iter()
            .map(|s| trajectory_path(&out, &format!("pretrain_seed{s}"), mlm, norm, mode))
            .collect();
        let downstream = cfg
            .seeds
            .iter()
            .map(|s| trajectory_path(&out, &format!("{task}_seed{s}"), &task, norm, mode))
            .collect();
        match cmd_recall(&RecallArgs {
            common: common.clone(),
            pretrain,
            downstream,
        }) {
            Ok(files) => written.extend(files),
            Err(e) if e.code == super::EXIT_CONFIG => log::warn!("recall for {task} skipped: {e}"),
            Err(e) => return Err(e),
        }
        for &seed in &cfg.seeds {
            written.extend(cmd_compare(&CompareArgs {
                common: common.clone(),
                a: out.join(checkpoint_name("pretrain", seed)),
                b: out.join(checkpoint_name(&task, seed)),
                task: task.clone(),
                importance: Some(out.join(format!("importance_{task}_seed{seed}_{task}_{norm}.csv"))),
            })?);
        }
    }
    let k = cfg.freeze_k();
    let seed = cfg.seeds[0];
    let base_path = out.join(checkpoint_name("pretrain", seed));
    let base = load_checkpoint(&base_path)?;
    for task in cfg.tasks.iter().map(|t| t.name.clone()) {
        log::info!("freeze {task}: {k} layers, seed {seed}");
        let data = task_dataset(&cfg, &task, &base.vocab, base.model.config.max_seq_len)?;
        let cmp = freeze_compare(&base.model, &data, &cfg.finetune, k, seed)?;
        let path = out.join(format!("freeze_{task}.json"));
        write_json(&path, &cmp)?;
        written.push(path);
    }
    written.extend(cmd_report(&ReportArgs {
        dir: out.clone(),
        out: None,
    })?);
    let mut manifest = Manifest::new("walkthrough", &cfg, &out);
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    for p in &written {
        manifest.output(p)?;
    }
    manifest.write(&out.join("walkthrough.manifest.json"))?;
    Ok(written)
}
