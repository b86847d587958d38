//! The `headlab` command pipeline.
//!
//! Every command reads an optional JSON [`RunConfig`], applies its flags on
//! top, writes its artifacts and a manifest into the output directory and
//! maps failures to exit codes: 2 config/input, 3 training, 4 geometry.

pub mod commands;
pub mod config;
pub mod report;
pub mod walkthrough;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use commands::{cmd_compare, cmd_finetune, cmd_importance, cmd_pretrain, cmd_prune, cmd_recall};
pub use config::{CorpusConfig, Geometry, RunConfig, TaskSource};
pub use report::cmd_report;
pub use walkthrough::cmd_walkthrough;

use crate::analysis::AnalysisError;
use crate::importance::ImportanceError;
use crate::io::IoError;
use crate::tasks::TaskError;
use crate::transformer::ModelError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_GEOMETRY: i32 = 4;

/// Env var capping worker threads.
pub const THREADS_ENV: &str = "HEADLAB_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn geometry(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_GEOMETRY,
            message: message.into(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Token { .. } | ModelError::SeqLen { .. } => CliError::geometry(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Diverged { .. } => CliError {
                code: EXIT_TRAINING,
                message: e.to_string(),
            },
            TaskError::Geometry(_) => CliError::geometry(e.to_string()),
            TaskError::Model(m) => m.into(),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<ImportanceError> for CliError {
    fn from(e: ImportanceError) -> Self {
        match e {
            ImportanceError::Task(t) => t.into(),
            ImportanceError::Model(m) => m.into(),
            _ => CliError::config(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Geometry(_) => CliError::geometry(e.to_string()),
            AnalysisError::Task(t) => t.into(),
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Contract(_) => CliError::config(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Model(m) => m.into(),
            _ => CliError::config(e.to_string()),
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: the config's output_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Train seeds 0..N instead of the configured seed list.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Plain-text corpus, one document per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Base checkpoint; `{seed}` is replaced by each seed.
    #[arg(long)]
    pub base: String,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Freeze embeddings and the lowest K layers.
    #[arg(long, default_value_t = 0)]
    pub freeze: usize,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task whose loss defines importance (`mlm` for the pre-training corpus).
    #[arg(long)]
    pub task: String,
    /// l1, l2, none or all.
    #[arg(long, default_value = "all")]
    pub norm: String,
    /// Sum gate gradients over layers before the absolute value.
    #[arg(long)]
    pub shared: bool,
    #[arg(long)]
    pub max_examples: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct PruneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task evaluated after every step.
    #[arg(long)]
    pub task: String,
    /// Task whose loss ranks heads (default: `--task`).
    #[arg(long)]
    pub importance_task: Option<String>,
    #[arg(long)]
    pub norm: Option<String>,
    /// iterative or one-shot.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub step_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct RecallArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Pre-train trajectory JSON files, one per seed.
    #[arg(long, num_args = 1.., required = true)]
    pub pretrain: Vec<PathBuf>,
    /// Downstream trajectory JSON files, one per seed.
    #[arg(long, num_args = 1.., required = true)]
    pub downstream: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Task whose dev inputs are fed to both models.
    #[arg(long)]
    pub task: String,
    /// Importance CSV for the correlation (default: estimated on `b`, l1).
    #[arg(long)]
    pub importance: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize)]
pub struct ReportArgs {
    /// Directory holding trajectory/recall/compare artifacts.
    #[arg(long)]
    pub dir: PathBuf,
    /// Where charts and summary.json go (default: DIR/report).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Masked-LM pre-training, one checkpoint per seed.
    Pretrain(PretrainArgs),
    /// Classification fine-tuning from pre-trained checkpoints.
    Finetune(FinetuneArgs),
    /// Head importance tables.
    Importance(ImportanceArgs),
    /// Prune-and-evaluate sweep.
    Prune(PruneArgs),
    /// Pre-train vs downstream head-set recall curve.
    Recall(RecallArgs),
    /// Attention divergence, feature distance and importance correlation.
    Compare(CompareArgs),
    /// SVG charts and summary JSON from an artifact directory.
    Report(ReportArgs),
    /// The full pipeline end to end.
    Walkthrough(CommonArgs),
}

#[derive(Parser, Debug)]
#[command(name = "headlab", version, about = "Attention-head importance and pruning lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Sizes the global worker pool from `HEADLAB_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool built earlier in this process wins; that is fine for tests
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<(), CliError> {
    init_threads()?;
    match command {
        Command::Pretrain(a) => cmd_pretrain(&a).map(|_| ()),
        Command::Finetune(a) => cmd_finetune(&a).map(|_| ()),
        Command::Importance(a) => cmd_importance(&a).map(|_| ()),
        Command::Prune(a) => cmd_prune(&a).map(|_| ()),
        Command::Recall(a) => cmd_recall(&a).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
        Command::Walkthrough(a) => cmd_walkthrough(&a).map(|_| ()),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("headlab: {e}");
            e.code
        }
    }
}
