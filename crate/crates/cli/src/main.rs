//! `rbp`: train networks with different learning channels and analyze the
//! ODEs of their averaged dynamics.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Axis, Globals};
use error::CliError;

#[derive(Parser)]
#[command(name = "rbp", version, about = "Learning-channel experiments and ODE analyses")]
struct Cli {
    /// Override the base seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for repeats and sweep points.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration (all repeats) and write metrics and a summary.
    Train { config: PathBuf },
    /// Train one run per axis value per repeat.
    Sweep {
        config: PathBuf,
        /// `name=v1,v2,…`; names: algorithm, sparsity, error_bits, update_bits,
        /// dropout, nonzero_mean, lr0, batch_size.
        #[arg(long)]
        axis: String,
    },
    /// Integrate an ODE system and compare with its closed-form limit.
    Dynamics { config: PathBuf },
    /// Tabulate the A[1,1,1] vector field on a grid.
    Field { config: PathBuf },
    /// Print the BP and SRBP backward-pass operation counts.
    Complexity {
        /// Comma-separated layer sizes, e.g. 784,100,10.
        arch: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rbp_core::par::configure_threads(n).map_err(CliError::Config)?;
    }
    let g = Globals { seed: cli.seed, out: cli.out };
    match cli.command {
        Command::Train { config } => commands::train(&config, &g),
        Command::Sweep { config, axis } => commands::sweep(&config, &Axis::parse(&axis)?, &g),
        Command::Dynamics { config } => commands::dynamics(&config, &g),
        Command::Field { config } => commands::field(&config, &g),
        Command::Complexity { arch } => commands::complexity(&arch),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Config(e.to_string().lines().next().unwrap_or_default().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
