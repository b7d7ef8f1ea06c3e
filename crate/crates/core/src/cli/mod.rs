//! The `lcpo-lab` command line.
//!
//! Every subcommand writes into `--out` (default `out/`) and finishes with a
//! `manifest.json` holding the effective configuration, SHA-256 digests of
//! its inputs and a timestamp. Everything else a run writes is a pure
//! function of its inputs and `--seed`.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 empty result.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{Layers, List};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Empty(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Empty(_) => 2,
        }
    }
}

macro_rules! input_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_error_from!(
    io::Error,
    serde_json::Error,
    crate::datapipe::DataError,
    crate::toylab::ToyError,
    crate::evalharness::EvalError,
    crate::convergence::ConvergenceError,
    crate::objectives::ObjectiveError
);

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lcpo-lab", version, about = "Length-controlled preference optimization lab")]
pub struct Cli {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` file layered under the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic short-vs-long rollout corpus.
    Synth(SynthArgs),
    /// Label rollouts, keep one split and build shortest/longest pairs.
    Pairs(PairsArgs),
    /// Train the toy policy on token-id pairs.
    TrainToy(TrainArgs),
    /// Evaluate the convergence conditions over a parameter grid.
    Analyze(AnalyzeArgs),
    /// Render accuracy and length tables from evaluation files.
    Report(ReportArgs),
    /// Per-split pair statistics for a rollout file.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub prompts: Option<usize>,
    #[arg(long)]
    pub short_len: Option<usize>,
    #[arg(long)]
    pub long_len: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub answer_tokens: Option<usize>,
    /// Fraction of prompts planned as medium.
    #[arg(long)]
    pub medium: Option<f64>,
    /// Fraction of prompts planned as difficult.
    #[arg(long)]
    pub difficult: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub rollouts: Option<PathBuf>,
    /// easy, medium or difficult.
    #[arg(long)]
    pub split: Option<String>,
    /// Keep only the first N pairs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// sft, dpo, simpo, simper, orpo or lcpo.
    #[arg(long)]
    pub objective: Option<String>,
    /// Rollouts to fit the initial policy on instead of the pairs.
    #[arg(long)]
    pub rollouts: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_sample_length: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub bin_width: Option<usize>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Defaults to one more than the largest token id seen.
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub m: Option<List<f64>>,
    #[arg(long)]
    pub lambda: Option<List<f64>>,
    /// Spacing of the ORPO probability grid.
    #[arg(long)]
    pub prob_step: Option<f64>,
    #[arg(long)]
    pub dpo_beta: Option<f64>,
    #[arg(long)]
    pub simpo_beta: Option<f64>,
    #[arg(long)]
    pub simpo_gamma: Option<f64>,
    #[arg(long)]
    pub sft_probes: Option<List<f64>>,
    #[arg(long)]
    pub token_probe: Option<f64>,
    #[arg(long)]
    pub lengths: Option<List<usize>>,
    #[arg(long)]
    pub gap_probes: Option<List<f64>>,
    #[arg(long)]
    pub witness_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `name=path` of an eval.jsonl file; repeatable, rows keep this order.
    #[arg(long = "eval")]
    pub evals: Vec<String>,
    /// `name=path` of a baseline eval.jsonl, or `name=ACC:LEN` with ACC in
    /// percent; repeatable.
    #[arg(long = "baseline")]
    pub baselines: Vec<String>,
    /// per-sample or per-record.
    #[arg(long)]
    pub averaging: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub rollouts: Option<PathBuf>,
}

/// Shared state of one invocation.
pub(crate) struct Ctx {
    pub command: &'static str,
    pub layers: Layers,
    pub seed: u64,
    pub out: PathBuf,
    pub verbose: bool,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Ctx {
    pub fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{}] {}", self.command, msg.as_ref());
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_owned());
    }

    /// Writes `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        self.log(format!("wrote {}", path.display()));
        self.outputs.push(name.to_owned());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        #[derive(Serialize)]
        struct InputDigest {
            path: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest {
            command: &'static str,
            version: &'static str,
            config: BTreeMap<String, String>,
            inputs: Vec<InputDigest>,
            outputs: Vec<String>,
            created_unix_secs: u64,
        }
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = self.out.clone();
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: self.layers.finish()?,
            inputs,
            outputs: self.outputs,
            created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(out.join("manifest.json"), bytes)?;
        Ok(())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Pairs(_) => "pairs",
        Command::TrainToy(_) => "train-toy",
        Command::Analyze(_) => "analyze",
        Command::Report(_) => "report",
        Command::Stats(_) => "stats",
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let mut layers = Layers::load(cli.config.as_deref())?;
    let seed = layers.resolve("seed", cli.seed, 0u64)?;
    let out = layers.resolve("out", cli.out.map(|p| p.display().to_string()), "out".to_owned())?;
    let mut ctx = Ctx {
        command: command_name(&cli.command),
        layers,
        seed,
        out: PathBuf::from(out),
        verbose: cli.verbose,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    fs::create_dir_all(&ctx.out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", ctx.out.display())))?;
    match cli.command {
        Command::Synth(a) => commands::synth(&mut ctx, a)?,
        Command::Pairs(a) => commands::pairs(&mut ctx, a)?,
        Command::TrainToy(a) => commands::train_toy(&mut ctx, a)?,
        Command::Analyze(a) => commands::analyze(&mut ctx, a)?,
        Command::Report(a) => commands::report(&mut ctx, a)?,
        Command::Stats(a) => commands::stats(&mut ctx, a)?,
    }
    ctx.finish()
}

/// Parses `args` (program name first), runs it and returns the exit code.
/// Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
