//! `tracegen`: train a trace model, sample synthetic traces, grade them.
//!
//! Exit codes are part of the interface: 0 success, 1 usage (bad flags or
//! config), 2 data (unreadable/mismatched inputs), 3 training or check
//! failure. Output files are written to a temp file and renamed into
//! place, so a failed run never leaves a truncated artifact.

mod commands;
mod errors;
mod output;
mod svg;

use clap::{Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(
    name = "tracegen",
    version,
    about = "Synthetic network trace generator and evaluation suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a headered CSV trace into the canonical column layout
    Ingest(commands::ingest::IngestArgs),
    /// Produce a seeded synthetic ground-truth trace from a spec file
    Fixture(commands::fixture::FixtureArgs),
    /// Train a model on a trace and write a checkpoint
    Train(commands::train::TrainArgs),
    /// Sample a synthetic trace from a checkpoint
    Generate(commands::generate::GenerateArgs),
    /// Compare a synthetic trace against a real one
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Score a trace against the protocol-compliance rule set
    Dkc(commands::dkc::DkcArgs),
    /// Render the diagnostic charts for a real/synthetic pair
    Plot(commands::plot::PlotArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(err.code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => commands::ingest::run(args),
        Command::Fixture(args) => commands::fixture::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Generate(args) => commands::generate::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Dkc(args) => commands::dkc::run(args),
        Command::Plot(args) => commands::plot::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
    }
}
