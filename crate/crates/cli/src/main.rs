//! `fmgspo`: batch front end for synthesis, preprocessing, training,
//! evaluation and sensor placement optimization.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Caps the worker pool when set to a positive integer.
const THREADS_VAR: &str = "FMGSPO_THREADS";

#[derive(Parser)]
#[command(name = "fmgspo", version, about = "Armband graph classification and sensor placement optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled synthetic recordings (CSV plus TOML metadata).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Condition and window a directory of recordings into a dataset archive.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a holdout split and save a checkpoint.
    Train {
        /// Dataset archive, or a preprocess output directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset and write its confusion matrix.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file, or a train output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for sensor subsets.
    Optimize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target size `k` or inclusive range `a..b`.
        #[arg(long)]
        k: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<SearchMode>,
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run manifests into one summary table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Seeds are stored in TOML manifests, which only hold signed 64-bit integers.
fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Greedy,
    Exhaustive,
}

fn limit_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| anyhow::anyhow!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    fmg_spo::exec::limit_workers(threads).map_err(anyhow::Error::msg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    limit_threads()?;
    match cli.command {
        Command::Synth { config, seed, out } => commands::synth(config.as_deref(), seed, &out),
        Command::Preprocess { input, config, out } => commands::preprocess(&input, config.as_deref(), &out),
        Command::Train { data, topology, config, seed, out } => {
            commands::train(&data, topology.as_deref(), config.as_deref(), seed, &out)
        }
        Command::Eval { data, checkpoint, topology, out } => {
            commands::eval(&data, &checkpoint, topology.as_deref(), &out)
        }
        Command::Optimize { data, topology, config, k, mode, seed, out } => commands::optimize(
            &data,
            topology.as_deref(),
            config.as_deref(),
            commands::OptimizeOverrides { k, mode, seed },
            &out,
        ),
        Command::Report { runs, out } => commands::report(&runs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
