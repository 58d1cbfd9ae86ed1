use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvrkit::config::ExperimentConfig;
use cvrkit::error::CliError;
use cvrkit::harness;

/// Post-click conversion-rate estimation experiments on biased logs.
#[derive(Parser)]
#[command(name = "cvrkit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic impression log and its oracle world.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model and report its metrics on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Model name, e.g. joint or ukd.
        #[arg(long)]
        model: String,
    },
    /// Train several models across seeds and rank them per metric.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated model names.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Independent runs per model.
        #[arg(long, default_value_t = 5)]
        n_seeds: usize,
    },
    /// Grid sweep over dropout rate, alpha and unclicked ratio.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Label-noise identification experiment.
    NoiseExp {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, u64, PathBuf), CliError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            CliError::Usage("no output directory: pass --out or set output_dir".to_string())
        })?;
    Ok((cfg, seed, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common } => {
            let (cfg, seed, out) = resolve(&common)?;
            harness::cmd_generate(&cfg, seed, &out)
        }
        Command::Train { common, model } => {
            let (cfg, seed, out) = resolve(&common)?;
            harness::cmd_train(&cfg, seed, &out, &model)
        }
        Command::Compare {
            common,
            models,
            n_seeds,
        } => {
            let (cfg, seed, out) = resolve(&common)?;
            harness::cmd_compare(&cfg, seed, &out, &models, n_seeds)
        }
        Command::Sweep { common } => {
            let (cfg, seed, out) = resolve(&common)?;
            harness::cmd_sweep(&cfg, seed, &out)
        }
        Command::NoiseExp { common } => {
            let (cfg, seed, out) = resolve(&common)?;
            harness::cmd_noise_exp(&cfg, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
