use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use seqfraud::pipeline::{run_pipeline, run_stage, PipelineConfig, Stage};

/// Multi-perspective HMM features for transaction fraud detection.
///
/// Every stage reads and writes files under the output directory, so stages
/// can be re-run one at a time. `run` executes all of them in order.
#[derive(Parser)]
#[command(name = "seqfraud", version)]
struct Cli {
    /// TOML config; every key is optional (defaults listed below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured classifier seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write data/transactions.csv from the configured source.
    Generate,
    /// Split transactions into train, validation, gap and test files.
    Split,
    /// Train the eight perspective HMMs for every (states, window) cell.
    TrainHmms,
    /// Write feature matrices and their metadata for the primary cell.
    Featurize,
    /// Grid-search the classifier per feature set on the validation period.
    Train,
    /// Score every feature set and the missing-value strategies on test.
    Evaluate,
    /// Score the sweep feature set in every (states, window) cell.
    Sweep,
    /// Render comparison, missing-value and sweep tables.
    Report,
    /// Run all stages.
    Run,
    /// Print the effective config as TOML.
    Config,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let defaults = PipelineConfig::default().to_toml().unwrap_or_default();
    let matches = Cli::command()
        .after_long_help(format!("Default config:\n\n{defaults}"))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> seqfraud::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    let stage = match cli.command {
        Command::Generate => Stage::Generate,
        Command::Split => Stage::Split,
        Command::TrainHmms => Stage::TrainHmms,
        Command::Featurize => Stage::Featurize,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Sweep => Stage::Sweep,
        Command::Report => Stage::Report,
        Command::Run => {
            let dir = run_pipeline(&cfg)?;
            println!("reports written to {}", dir.join("reports").display());
            return Ok(());
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
    };
    run_stage(&cfg, stage)
}
