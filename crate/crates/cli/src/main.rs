//! `proplab`: simulate click logs, annotate them with a relevance judge,
//! estimate position-bias propensities, train rankers and evaluate them.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure,
//! 3 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use proplab::ltr::TrainingMode;
use proplab::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "proplab", version, about = "Position-bias estimation from judge-scored click logs")]
pub struct Cli {
    /// Run every stage on one thread instead of the rayon pool.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic click log, item features and the true surface.
    Simulate(SimulateArgs),
    /// Fill in judge scores for a log.
    Annotate(AnnotateArgs),
    /// Estimate propensities, per-bucket curves and their divergence.
    Estimate(EstimateArgs),
    /// Train a pointwise ranker, optionally IPS-weighted.
    Train(TrainArgs),
    /// Compare rankings against the logged order with NDCG and wNDCG.
    Evaluate(EvaluateArgs),
    /// Rerun the command behind a manifest and check its outputs match.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (TOML, or JSON by extension).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Constant score for every row.
    Mock,
    /// Calibrated noisy judge driven by `true_relevance`.
    Simulated,
    /// Chat-completion HTTP endpoint; token read from PROPLAB_JUDGE_TOKEN.
    Endpoint,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, value_enum, default_value_t = Source::Simulated)]
    pub source: Source,
    /// Judge settings (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON with query and item text, required for `--source endpoint`.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Seed of the simulated judge.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Re-score rows that already have a judge score.
    #[arg(long)]
    pub force: bool,
    /// Output log file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Score buckets, e.g. "81-100,61-80,41-60"; empty for none.
    #[arg(long)]
    pub buckets: Option<String>,
    #[arg(long)]
    pub min_support: Option<u64>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub resamples: Option<usize>,
    /// Bootstrap seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write SVG heatmaps.
    #[arg(long)]
    pub svg: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Ips,
    Naive,
}

impl From<Mode> for TrainingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ips => TrainingMode::Ips,
            Mode::Naive => TrainingMode::Naive,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Propensity CSV from `estimate`; required for `--mode ips`.
    #[arg(long)]
    pub propensity: Option<PathBuf>,
    /// Training config (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub clip_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Labels {
    Booked,
    TrueRelevance,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Item features, needed to score `--model` rankers.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Ranker to evaluate as NAME=PATH; repeatable.
    #[arg(long)]
    pub model: Vec<String>,
    /// Add the ranking by judge score.
    #[arg(long)]
    pub judge: bool,
    /// Catalog JSON; adds a BM25 ranking over item text.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Labels::Booked)]
    pub labels: Labels,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value = "logged")]
    pub baseline: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<proplab::Error>() {
            return match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Io => 2,
                ErrorKind::Numerical => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
