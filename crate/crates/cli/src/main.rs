//! `rbnn`: simulate triaxial datasets, train recursive networks, predict and
//! evaluate.

mod config;
mod evaluate;
mod io;
mod predict;
mod prep;
mod simulate;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::ModelKind;
use io::{coded, exit_code, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "rbnn", version, about = "Recursive Bayesian networks for triaxial test response")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory for all outputs and the run manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the triaxial simulator and write a dataset CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Fail if any series cannot be simulated.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint with its history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        #[arg(long = "H")]
        h: Option<usize>,
        /// Overrides the dataset path in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Full-sequence prediction from the initial state and inputs only.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated test ids; defaults to the checkpoint's test split.
        #[arg(long, value_delimiter = ',')]
        test_ids: Option<Vec<String>>,
        /// Monte Carlo samples for Bayesian checkpoints.
        #[arg(long)]
        nmc: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a prediction CSV against a dataset.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Normalization stats for normalized metrics; defaults to
        /// `norm_stats.json` next to the predictions.
        #[arg(long)]
        norm_stats: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train one model per window length and report validation scores.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Comma-separated window lengths; overrides the config.
        #[arg(long = "H", value_delimiter = ',')]
        hs: Option<Vec<usize>>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("RBNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| coded(EXIT_CONFIG, format!("RBNN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate { config, strict, common } => simulate::run(&config, strict, common.seed, &common.out_dir),
        Command::Train { config, model, h, dataset, common } => {
            let o = config::Overrides { seed: common.seed, model, h, dataset };
            train::run(&config, &o, &common.out_dir)
        }
        Command::Predict { checkpoint, dataset, test_ids, nmc, common } => {
            predict::run(&checkpoint, &dataset, test_ids, nmc, common.seed, &common.out_dir)
        }
        Command::Evaluate { predictions, dataset, norm_stats, level, out_dir } => {
            evaluate::run(&predictions, &dataset, norm_stats.as_deref(), level, &out_dir)
        }
        Command::Sweep { config, model, hs, dataset, common } => {
            let o = config::Overrides { seed: common.seed, model, h: None, dataset };
            train::sweep(&config, &o, hs, &common.out_dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
