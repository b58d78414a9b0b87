//! `repeller`: build the circle maps, sample their graphs, run orbit
//! statistics and the verification suite, and export everything for plotting.

mod commands;
mod export;
mod params_args;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use repeller::dynamics::DEFAULT_SEED;

use commands::{
    BasinArgs, BirkhoffArgs, BuildArgs, ControlArgs, GraphArgs, OrbitArgs, ReturnArgs, VerifyArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    Usage(String),
    /// The computation itself failed; exit code 1.
    Compute(repeller::Error),
    Io(String),
    /// `verify` found failing checks; exit code 1.
    ChecksFailed(usize),
}

impl From<repeller::Error> for CliError {
    fn from(e: repeller::Error) -> Self {
        CliError::Compute(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Compute(e) => write!(f, "{e} ({e:?})"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
            CliError::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "repeller", version, about = "Circle maps with a repelling fixed point that carries a physical measure")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, env = "REPELLER_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a parameter set and print its derived constants.
    Build(BuildArgs),
    /// Sample f₁, F, f₂ or f (optionally one branch) to CSV.
    Graph(GraphArgs),
    /// Iterate one orbit; export points, histogram and statistics.
    Orbit(OrbitArgs),
    /// Birkhoff fractions near p from random starts.
    Birkhoff(BirkhoffArgs),
    /// Share of random starts whose fraction near p reaches a threshold.
    Basin(BasinArgs),
    /// First-return times to [q, 1] against the cell indices.
    ReturnTimes(ReturnArgs),
    /// Run the verification suite; exits nonzero iff a check fails.
    Verify(VerifyArgs),
    /// Reference runs of the doubling map x ↦ 2x mod 1.
    Control(ControlArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Build(a) => commands::build(&a, seed),
        Command::Graph(a) => commands::graph(&a, seed),
        Command::Orbit(a) => commands::orbit(&a, seed),
        Command::Birkhoff(a) => commands::birkhoff(&a, seed),
        Command::Basin(a) => commands::basin(&a, seed),
        Command::ReturnTimes(a) => commands::return_times(&a, seed),
        Command::Verify(a) => commands::verify(&a, seed),
        Command::Control(a) => commands::control(&a, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
