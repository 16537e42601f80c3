//! Command-line pipeline for process-mixture spatial extremes.
//!
//! Typical flow: `simulate` (or `fetch-nwis`) -> `train` -> `fit` ->
//! `diagnose` / `exceedance` / `compare`. Each command writes a resolved
//! configuration snapshot and a manifest with input digests next to its
//! outputs, so a run is reproducible from its output directory alone.

mod commands;
mod config;
mod ingest;
mod manifest;
mod nwis;
mod pipeline;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pmm", version, about = "Process mixture models for spatial extremes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicate fields from a model variant.
    Simulate(commands::simulate::SimulateArgs),
    /// Train conditional-density nets on synthetic draws.
    Train(commands::train::TrainArgs),
    /// Run MCMC against the surrogate likelihood.
    Fit(commands::fit::FitArgs),
    /// Tail-dependence, variogram, and calibration diagnostics.
    Diagnose(commands::diagnose::DiagnoseArgs),
    /// Posterior joint exceedance probabilities for a site cluster.
    Exceedance(commands::exceedance::ExceedanceArgs),
    /// WAIC / LOO comparison across fitted variants.
    Compare(commands::compare::CompareArgs),
    /// Print a trained net's architecture and variable importance.
    Inspect(commands::inspect::InspectArgs),
    /// Build a station CSV from the USGS NWIS daily-values service.
    FetchNwis(commands::fetch::FetchArgs),
}

/// Exit codes: 0 success, 1 user error (input/config), 2 internal or
/// numeric failure.
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<pmm::Error>() {
            return match core {
                pmm::Error::InvalidInput(_) | pmm::Error::LayoutMismatch(_) => 1,
                pmm::Error::FactorizationFailed { .. }
                | pmm::Error::Numeric(_)
                | pmm::Error::TrainingDiverged { .. }
                | pmm::Error::Serialization(_)
                | pmm::Error::Io(_) => 2,
            };
        }
    }
    1
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Diagnose(args) => commands::diagnose::run(args),
        Command::Exceedance(args) => commands::exceedance::run(args),
        Command::Compare(args) => commands::compare::run(args),
        Command::Inspect(args) => commands::inspect::run(args),
        Command::FetchNwis(args) => commands::fetch::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}
