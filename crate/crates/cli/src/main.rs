//! `qapseg`: dilation analysis, training, evaluation, ablation and
//! rendering for quadruple augmented pyramid segmentation networks.

mod commands;
mod config;
mod dataset;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "qapseg",
    version,
    about = "Multi-class segmentation with augmented pyramid networks"
)]
struct Cli {
    /// Output style for tables.
    #[arg(long, value_enum, global = true, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Receptive-field and coverage report for serial atrous stacks.
    AnalyzeDilation(commands::analyze::Args),
    /// Train a model and write its log and best checkpoint.
    Train(commands::train::Args),
    /// Score a checkpoint on a dataset split.
    Evaluate(commands::evaluate::Args),
    /// Train and score all ten add-on combinations.
    Ablate(commands::ablate::Args),
    /// Colour-code true/false positives and false negatives per class.
    RenderOverlay(commands::overlay::Args),
    /// Write synthetic lung phantoms as PGM pairs with a manifest.
    GenSynthetic(commands::synthetic::Args),
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("QAPSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::config(format!(
            "QAPSEG_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let f = cli.format;
    match cli.command {
        Command::AnalyzeDilation(a) => commands::analyze::run(a, f),
        Command::Train(a) => commands::train::run(a, f),
        Command::Evaluate(a) => commands::evaluate::run(a, f),
        Command::Ablate(a) => commands::ablate::run(a, f),
        Command::RenderOverlay(a) => commands::overlay::run(a, f),
        Command::GenSynthetic(a) => commands::synthetic::run(a, f),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
