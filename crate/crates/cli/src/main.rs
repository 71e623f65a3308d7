//! `shiftgrad` command-line driver: generate → train → score → eval, the
//! online monitor, and a summary report.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shiftgrad::score::ScoreVariant;

use commands::{Ctx, Phase};
use config::Overrides;
use error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "shiftgrad", version, about = "Gradient-norm distribution-shift detection for 2-D trajectories")]
struct Cli {
    /// TOML config file, overlaid on the experiment preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set benchmark.primary.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Offline benchmark preset: turn_left or over_speed.
    #[arg(long, global = true)]
    experiment: Option<String>,
    /// Output root (default: $SHIFTGRAD_OUT, then config `out`, then ./shiftgrad-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the labeled corpus and its train/val/test partition.
    Generate {
        /// Regenerate in a scratch directory and compare with the manifest.
        #[arg(long)]
        verify: bool,
        /// Also generate the monitor's episode sets.
        #[arg(long)]
        episodes: bool,
    },
    /// Train one phase (or all of them).
    Train {
        #[arg(long, value_enum, default_value = "all")]
        phase: Phase,
    },
    /// Score a corpus with one or more variants.
    Score {
        /// Repeatable; defaults to the configured variant list.
        #[arg(long = "variant")]
        variants: Vec<String>,
        /// Corpus to score (default: the test split).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// AUROC per variant, results.json and distribution CSV.
    Eval {
        /// Scores CSV (default: <experiment>/scores.csv).
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Online collision monitor on generated episodes.
    Monitor,
    /// Gather every results.json under the output root.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let cfg = config::resolve(&Overrides {
        file: cli.config.clone(),
        sets: cli.sets.clone(),
        seed: cli.seed,
        experiment: cli.experiment.clone(),
        out: cli.out.clone(),
    })?;
    let root = config::out_root(cli.out.as_deref(), &cfg);
    let ctx = Ctx { cfg, root };
    match cli.command {
        Command::Generate { verify, episodes } => commands::generate(&ctx, verify, episodes),
        Command::Train { phase } => commands::train(&ctx, phase),
        Command::Score { variants, corpus } => {
            let v = if variants.is_empty() {
                None
            } else {
                Some(
                    variants
                        .iter()
                        .map(|s| s.parse::<ScoreVariant>())
                        .collect::<shiftgrad::Result<Vec<_>>>()?,
                )
            };
            commands::score(&ctx, v, corpus)
        }
        Command::Eval { scores } => commands::eval(&ctx, scores),
        Command::Monitor => commands::monitor(&ctx),
        Command::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
