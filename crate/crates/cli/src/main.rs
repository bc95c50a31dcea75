use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod failure;

use failure::Failure;

/// Simulate, estimate and compare arithmetic-mean elasticities.
#[derive(Debug, Parser)]
#[command(name = "elast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Binding {
    /// Outcome column.
    #[arg(long)]
    y: Option<String>,
    /// Treatment column.
    #[arg(long)]
    x: Option<String>,
    /// Control columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    controls: Option<Vec<String>>,
    /// Instrument columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    instruments: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from a DGP spec and record its oracle.
    Simulate(Common),
    /// Run one estimator on a CSV dataset.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        binding: Binding,
    },
    /// Test the difference between two estimate reports.
    Compare(Common),
    /// Monte Carlo bias, RMSE and coverage study.
    Coverage(Common),
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.config, c.seed, c.out),
        Command::Estimate { common: c, binding: b } => {
            let over = commands::ColumnOverrides {
                y: b.y,
                x: b.x,
                controls: b.controls,
                instruments: b.instruments,
            };
            commands::estimate(&c.config, c.seed, c.out, over)
        }
        Command::Compare(c) => commands::compare(&c.config, c.seed, c.out),
        Command::Coverage(c) => commands::coverage(&c.config, c.seed, c.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
