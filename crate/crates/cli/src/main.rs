mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tierfee", version, about = "Simulate and analyze EIP-1559 and tiered transaction fee mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Path to the TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truncates the load schedule to the first N blocks.
    #[arg(long)]
    pub blocks: Option<u64>,
    /// Suppresses the report on stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write the trace CSV and a summary.
    Simulate(Common),
    /// Solve the steady-state prices described in the [solve] section.
    Solve(Common),
    /// Simulate and check the configured diversity policy.
    CheckPolicy(Common),
    /// Run one simulation per value of a numeric parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted parameter path, e.g. `mechanism.add_tier_price` or `load.regions[1].rate`;
        /// `n` sets every region's rate.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Solve(c) => commands::solve(&c),
        Command::CheckPolicy(c) => commands::check_policy(&c),
        Command::Sweep {
            common,
            param,
            values,
            jobs,
        } => commands::sweep(&common, &param, &values, jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tierfee: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
