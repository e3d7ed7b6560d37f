//! Command-line experiment runner for the online Bayesian regret-bound
//! library: validates declarative configs, runs seeded experiments, and
//! emits machine-readable records plus columnar plot data.

mod config;
mod error;
mod experiments;
mod plots;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::{validation, CliError};

#[derive(Parser)]
#[command(
    name = "hibayes",
    version,
    about = "Seeded regret-bound experiments with machine-readable outputs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write its records.
    Run {
        /// Path to a TOML experiment configuration.
        config: PathBuf,
    },
    /// Check a config file and exit without running anything.
    Validate {
        /// Path to a TOML experiment configuration.
        config: PathBuf,
    },
    /// Write columnar plot data from a completed experiment's records.
    EmitPlots {
        /// Path to a records JSON file produced by `run`.
        records: PathBuf,
        /// Experiment kind the records are expected to hold.
        #[arg(long)]
        kind: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => {
            let experiment = config::load(&config)?;
            let results = experiments::run(&experiment)?;
            let path = PathBuf::from(&experiment.output_dir)
                .join(format!("{}_records.json", experiment.kind.name()));
            records::write_records(&path, &results)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Validate { config } => {
            let experiment = config::load(&config)?;
            println!("ok: {} configuration is valid", experiment.kind.name());
            Ok(())
        }
        Command::EmitPlots { records, kind } => {
            let expected = config::ExperimentKind::parse(&kind)?;
            let file = records::read_records(&records)?;
            let actual = file.experiment.kind_name();
            if actual != expected.name() {
                return Err(validation(format!(
                    "{} holds {actual} records, not {}",
                    records.display(),
                    expected.name()
                )));
            }
            let path = plots::emit(&file, &records)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
