//! `paskit` command-line driver.
//!
//! Every command is first resolved into a [`Run`] (flags over config file
//! over defaults), executed, and recorded next to its outputs as a
//! [`RunManifest`] that `paskit replay` can execute again.

mod commands;
mod config;
mod output;
pub mod svg;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use paskit_core::sim::SimConfig;
use serde::{Deserialize, Serialize};

pub use config::FileConfig;
pub use output::{read_scores, write_atomic, ScoreRow};

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "PASKIT_THREADS";

/// Name of the run manifest written into output directories.
pub const RUN_MANIFEST: &str = "run.json";

/// Bad invocation: exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

/// Sizes the global worker pool from `PASKIT_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring worker threads")
}

#[derive(Debug, Parser)]
#[command(
    name = "paskit",
    version,
    about = "Score object hallucinations from recorded attention and logits"
)]
pub struct Cli {
    /// TOML config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every trace container in a corpus directory.
    Validate(ValidateArgs),
    /// Generate a synthetic labeled corpus.
    Simulate(SimulateArgs),
    /// Score every object mention with the chosen detectors.
    Score(ScoreArgs),
    /// AUROC, curves and score distributions from a score file.
    Eval(EvalArgs),
    /// Layer and token-role ablations of the attention score.
    Ablate(AblateArgs),
    /// Write ROC and precision-recall curves from a score file.
    ExportCurves(ExportArgs),
    /// Re-execute a recorded run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also write the per-file report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_traces: Option<usize>,
    /// Attention mass moved from image to prelim for hallucinated objects.
    #[arg(long)]
    pub mode_shift: Option<f64>,
    #[arg(long)]
    pub hallucination_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary JSON file, or `coco` / `voc` for a builtin class list.
    #[arg(long)]
    pub vocab: Option<String>,
    /// Comma-separated detector names; all detectors when omitted.
    #[arg(long)]
    pub detectors: Option<String>,
    /// Attention layer for the prelim score.
    #[arg(long)]
    pub layer: Option<u32>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output formats; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub format: Vec<Format>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: Option<String>,
    /// Layers to compare; every layer shared by the corpus when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<u32>,
    /// Layer used for the per-role table and the correlation matrix.
    #[arg(long)]
    pub layer: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Comma-separated detectors; every detector in the file when omitted.
    #[arg(long)]
    pub detectors: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub format: Vec<Format>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run manifest to execute.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A fully resolved command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Run {
    Validate {
        corpus: PathBuf,
        report: Option<PathBuf>,
    },
    Simulate {
        out: PathBuf,
        config: SimConfig,
    },
    Score {
        corpus: PathBuf,
        vocab: String,
        detectors: Vec<String>,
        layer: u32,
        out: PathBuf,
    },
    Eval {
        scores: PathBuf,
        out: PathBuf,
        formats: Vec<Format>,
    },
    Ablate {
        corpus: PathBuf,
        vocab: String,
        layers: Vec<u32>,
        layer: u32,
        out: PathBuf,
    },
    ExportCurves {
        scores: PathBuf,
        detectors: Vec<String>,
        formats: Vec<Format>,
        out: PathBuf,
    },
}

impl Run {
    fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Run::Validate { report, .. } => report.as_mut(),
            Run::Simulate { out, .. }
            | Run::Score { out, .. }
            | Run::Eval { out, .. }
            | Run::Ablate { out, .. }
            | Run::ExportCurves { out, .. } => Some(out),
        }
    }

    /// Where the manifest for this run goes, if the run has outputs.
    pub fn manifest_path(&self) -> Option<PathBuf> {
        match self {
            Run::Validate { report, .. } => report.as_ref().map(|r| sibling_manifest(r)),
            Run::Score { out, .. } => Some(sibling_manifest(out)),
            Run::Simulate { out, .. }
            | Run::Eval { out, .. }
            | Run::Ablate { out, .. }
            | Run::ExportCurves { out, .. } => Some(out.join(RUN_MANIFEST)),
        }
    }
}

fn sibling_manifest(file: &Path) -> PathBuf {
    file.with_extension("run.json")
}

/// Record of one execution, sufficient to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub run: Run,
    /// Files written, relative to the output location.
    pub outputs: Vec<String>,
}

/// Parses arguments and executes; returns the process exit status.
pub fn run(cli: Cli) -> Result<u8> {
    let file_config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let run = match cli.command {
        Command::Replay(args) => {
            let text = std::fs::read_to_string(&args.manifest)
                .with_context(|| format!("reading {}", args.manifest.display()))?;
            let manifest: RunManifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", args.manifest.display()))?;
            let mut run = manifest.run;
            if let Some(out) = args.out {
                match run.out_mut() {
                    Some(slot) => *slot = out,
                    None => return Err(usage("this run has no output location to override")),
                }
            }
            run
        }
        command => file_config.resolve(command)?,
    };
    execute(&run)
}

/// Runs from an argument vector, as the binary would.
pub fn run_from_args<I, T>(args: I) -> Result<u8>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| usage(e.to_string()))?;
    run(cli)
}

/// Executes a resolved run and writes its manifest.
pub fn execute(run: &Run) -> Result<u8> {
    let outcome = commands::execute(run)?;
    if let Some(path) = run.manifest_path() {
        let manifest = RunManifest {
            tool: "paskit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            run: run.clone(),
            outputs: outcome.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(outcome.status)
}
