//! `qecbench` command line: dataset generation, training, evaluation,
//! benchmark grids, depth sweeps, gradient checks and dataset dumps.
//!
//! Exit codes: 0 on success, 2 for usage and range errors, 1 for runtime
//! failures (reported on stderr as one JSON object).

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qecbench::decoders::Architecture;
use qecbench::QecError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Run(#[from] QecError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Run(QecError::InvalidParameter(_)) => "invalid_parameter",
            CliError::Run(QecError::Format { .. }) => "format",
            CliError::Run(QecError::Divergence { .. }) => "divergence",
            CliError::Run(QecError::Tensor(_)) => "tensor",
            CliError::Run(QecError::Io(_)) => "io",
            CliError::Run(QecError::Json(_)) => "json",
            CliError::Failed(_) => "check_failed",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "qecbench", version, about = "Surface-code syndrome decoding benchmark")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "QEC_JOBS", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a training set (degeneracy-filtered) or an evaluation set.
    Generate(GenerateArgs),
    /// Train one decoder and write its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on an evaluation set.
    Eval(EvalArgs),
    /// Train and score every (model, distance, p, seed) combination.
    Bench(BenchArgs),
    /// Train GCN/GCNII at several depths on one (distance, p) cell.
    SweepDepth(SweepDepthArgs),
    /// Finite-difference check of every primitive and architecture.
    Gradcheck(GradcheckArgs),
    /// Dump a binary dataset as JSON lines.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 3, value_parser = parse_distance)]
    pub distance: usize,
    /// Physical error probability per data qubit and Pauli type.
    #[arg(long, value_parser = parse_probability)]
    pub p: f64,
    /// Samples to draw (pool size for training sets).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub pool: Option<u64>,
    #[arg(long, value_enum, default_value_t = Mode::Train)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Full-size pools (10^7 at d=3, 10^6 otherwise; 10^6 eval samples).
    #[arg(long = "paper-scale")]
    pub full_scale: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_architecture)]
    pub model: Architecture,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = parse_lr)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Published per-cell hyperparameters and 1000 epochs.
    #[arg(long = "paper-scale")]
    pub full_scale: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Checkpoint file, or a directory holding `model.ckpt`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Single-sample timing repetitions (0 disables, otherwise >= 100).
    #[arg(long, default_value_t = 100)]
    pub timing_reps: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct ScaleArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub pool: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub val_size: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub test_size: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: Option<u64>,
    /// Single-sample timing repetitions per run (0 disables, otherwise >= 100).
    #[arg(long, default_value_t = 100)]
    pub timing_reps: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "cnn,unet,gcn,gcnii", value_parser = parse_architecture)]
    pub models: Vec<Architecture>,
    #[arg(long, value_delimiter = ',', default_value = "3", value_parser = parse_distance)]
    pub distances: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.01", value_parser = parse_probability)]
    pub ps: Vec<f64>,
    /// Number of training seeds per cell (seeds 0..K).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Full-size data and the published per-cell hyperparameters.
    #[arg(long = "paper-scale")]
    pub full_scale: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepDepthArgs {
    #[arg(long, value_delimiter = ',', default_value = "gcn,gcnii", value_parser = parse_architecture)]
    pub models: Vec<Architecture>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32", value_parser = clap::value_parser!(usize))]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = parse_distance)]
    pub distance: usize,
    #[arg(long, default_value_t = 0.005, value_parser = parse_probability)]
    pub p: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Full-size data (epochs stay at the desk value unless given).
    #[arg(long = "paper-scale")]
    pub full_scale: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Directory for `gradcheck.json` and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct InspectArgs {
    /// Binary dataset to dump.
    pub input: PathBuf,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("probability must lie in [0, 1], got {p}"))
    }
}

fn parse_distance(s: &str) -> Result<usize, String> {
    let d: usize = s.parse().map_err(|_| format!("`{s}` is not an integer"))?;
    if (2..=64).contains(&d) {
        Ok(d)
    } else {
        Err(format!("distance must lie in [2, 64], got {d}"))
    }
}

fn parse_lr(s: &str) -> Result<f64, String> {
    let lr: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if lr.is_finite() && lr >= 0.0 {
        Ok(lr)
    } else {
        Err(format!("learning rate must be finite and non-negative, got {lr}"))
    }
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: QecError| e.to_string())
}

/// Output paths are taken relative to `QEC_OUT_ROOT` when it is set.
pub fn out_path(path: &Path) -> PathBuf {
    match std::env::var_os("QEC_OUT_ROOT") {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let jobs = cli.jobs.map_or_else(
        || std::thread::available_parallelism().map_or(1, |n| n.get()),
        |j| j as usize,
    );
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
    {
        eprintln!("warning: worker pool already initialised: {e}");
    }
    let outcome = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a, jobs),
        Command::SweepDepth(a) => commands::sweep_depth(&a, jobs),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
