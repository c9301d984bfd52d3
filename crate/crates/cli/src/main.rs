use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use metadyn::harness::{self, ExperimentConfig, RunManifest, RunOptions, RunStatus};

#[derive(Parser)]
#[command(name = "metadyn", version, about = "Learner, Meta-Learner and Bayes-oracle learning dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List experiment ids, the figures they reproduce and default budgets.
    List,
    /// Check a config and print it fully defaulted.
    Validate { config: PathBuf },
    /// Run an experiment end to end.
    Run {
        config: PathBuf,
        /// Output directory (default: config `output_dir`, then $METADYN_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Probe a saved Meta-Learner checkpoint with a config's probe settings.
    Probe {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Recompute figure CSVs from a trace directory.
    Analyze { trace_dir: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    harness::validate_config(&raw).with_context(|| format!("validating {}", path.display()))
}

fn report(m: &RunManifest) -> ExitCode {
    let figures = m.files.iter().filter(|f| f.path.starts_with("figures/")).count();
    match &m.status {
        RunStatus::Completed => {
            println!("{}: completed, {} files ({figures} figure CSVs)", m.experiment, m.files.len());
            println!("config hash {}", m.config_hash);
            ExitCode::SUCCESS
        }
        RunStatus::Failed { stage, message } => {
            eprintln!("{}: failed during {stage}: {message}", m.experiment);
            ExitCode::FAILURE
        }
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for e in harness::list_experiments() {
                println!("{:<20} {:<34} {}", e.id.as_str(), e.figures, e.budget);
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
        Command::Run {
            config,
            out,
            workers,
            seed,
        } => {
            let cfg = load(&config)?;
            let m = harness::run(&cfg, &RunOptions { out, workers, seed })?;
            return Ok(report(&m));
        }
        Command::Probe {
            checkpoint,
            config,
            out,
            workers,
        } => {
            let cfg = load(&config)?;
            let m = harness::probe(&checkpoint, &cfg, &RunOptions { out, workers, seed: None })?;
            return Ok(report(&m));
        }
        Command::Analyze { trace_dir } => {
            for p in harness::analyze(&trace_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
