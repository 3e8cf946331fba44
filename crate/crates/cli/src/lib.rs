//! Batch front end: `dataset`, `train`, `eval` and `sweep` subcommands over
//! one TOML run configuration.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Algorithm, RunConfig};

/// Process exit status for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit status for runtime and numerical errors.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mvlr",
    version,
    about = "Position-agnostic clustered low-rank MIMO channel estimation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML); built-in defaults fill every missing key.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the command (overrides dataset.seed).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "MVLR_THREADS", value_name = "N")]
    pub threads: Option<usize>,
    /// Dotted-key override, e.g. `--set dataset.n=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training passages, bursts and U-ML estimates.
    Dataset(DatasetArgs),
    /// Cluster a dataset and train one low-rank projector per cluster.
    Train(TrainArgs),
    /// Score a model along the held-out reference trajectory.
    Eval(EvalArgs),
    /// LR gain against the number of training sequences.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Target SNR, dB (overrides dataset.snr_db).
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `dataset`.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Output directory for the model and diagnostics.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    /// Fixed number of clusters.
    #[arg(long, value_name = "INT", conflicts_with = "k_range")]
    pub k: Option<usize>,
    /// Select K by silhouette over an inclusive range, e.g. 2..12.
    #[arg(long, value_name = "A..B")]
    pub k_range: Option<KRange>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Output directory for the report.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Evaluation SNR, dB (overrides eval.snr_db).
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    /// Also score a baseline that groups training passages by position.
    #[arg(long, value_enum, requires = "dataset")]
    pub baseline: Option<BaselineArg>,
    /// Training dataset; needed by the position-aware baseline.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// SNR, dB (overrides dataset.snr_db).
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Pam,
    Clara,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Pam => Algorithm::Pam,
            AlgorithmArg::Clara => Algorithm::Clara,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    PositionAware,
}

/// Inclusive `A..B`; `A..=B` is accepted too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange(pub usize, pub usize);

impl FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got '{s}'"))?;
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: usize = a.trim().parse().map_err(|_| format!("bad lower bound in '{s}'"))?;
        let b: usize = b.trim().parse().map_err(|_| format!("bad upper bound in '{s}'"))?;
        if a < 2 || b < a {
            return Err(format!("range {a}..{b} must satisfy 2 <= A <= B"));
        }
        Ok(KRange(a, b))
    }
}

/// Runs a parsed command line; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
