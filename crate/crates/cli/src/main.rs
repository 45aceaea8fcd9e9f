//! `fluxbench`: benchmark hourly flux predictions under distribution
//! shift. See each subcommand's `--help` and the repository README for
//! the configuration format and output layout.

mod commands;
mod config;
mod errors;
mod fsio;

use clap::{Parser, Subcommand};

use errors::CliError;

/// Distribution-shift benchmarking for multi-site hourly flux prediction.
#[derive(Parser)]
#[command(name = "fluxbench", version, propagate_version = true)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    /// Results are identical for every thread count.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset with known shift structure.
    Synth(commands::SynthArgs),
    /// Parse a dataset table and report row-level rejects.
    IngestCheck(commands::IngestCheckArgs),
    /// Build the configured train/validation/test splits.
    Split(commands::SplitArgs),
    /// Quantify covariate and conditional shift for one scenario.
    Diagnose(commands::DiagnoseArgs),
    /// Fit reference models on a scenario's training pool.
    Train(commands::TrainArgs),
    /// Predict a scenario's test hours with trained models.
    Predict(commands::PredictArgs),
    /// Score prediction files and write the metric bundle.
    Evaluate(commands::EvaluateArgs),
    /// Split, train, predict, and evaluate in one deterministic pass.
    Report(commands::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            CliError::Config("--jobs must be at least 1".into()).exit();
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            CliError::Config(format!("failed to size the thread pool: {e}")).exit();
        }
    }
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::IngestCheck(args) => commands::ingest_check(args),
        Command::Split(args) => commands::split(args),
        Command::Diagnose(args) => commands::diagnose(args),
        Command::Train(args) => commands::train(args),
        Command::Predict(args) => commands::predict(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Report(args) => commands::report(args),
    };
    if let Err(e) = result {
        e.exit();
    }
}
