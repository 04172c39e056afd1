//! `intrahost`: threshold analysis, simulation, verification and parameter
//! sweeps for within-host parasite scenarios.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "intrahost",
    version,
    about = "Within-host parasite model: thresholds, simulation, Lyapunov checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print x*, per-strain thresholds, equilibria, stability flags and the
    /// predicted outcome.
    Analyze {
        scenario: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Integrate the scenario and write the trajectory as CSV.
    Simulate {
        scenario: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, compare against the prediction and check the Lyapunov
    /// function decreases along the run.
    Verify { scenario: PathBuf },
    /// Evaluate thresholds and predictions over a range of one parameter.
    Sweep {
        scenario: PathBuf,
        /// Parameter path such as `strain1.beta`, `strain2.alphas[1]`, `u`
        /// or `recruitment.lambda`.
        #[arg(long)]
        param: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        /// Number of grid points.
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also simulate every cell and report whether the outcome matched.
        #[arg(long)]
        simulate: bool,
    },
}

/// Command failures, each mapped to its exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Unreadable or malformed scenario.
    #[error("parse error: {0}")]
    Parse(String),
    /// Parameters, options or paths that do not describe a valid run.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("integration failed: {0}")]
    Integrator(String),
    /// Verification found a disagreement.
    #[error("verification failed: {0}")]
    Mismatch(String),
    #[error("output error: {0}")]
    Output(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Parse(_) => 2,
            Self::Invalid(_) => 3,
            Self::Integrator(_) => 4,
            Self::Mismatch(_) => 5,
            Self::Output(_) => 1,
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("INTRAHOST_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| Failure::Invalid(format!("INTRAHOST_THREADS = {value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Invalid(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Analyze { scenario, json } => commands::analyze(&scenario, json.as_deref()),
        Command::Simulate { scenario, out } => commands::simulate(&scenario, out.as_deref()),
        Command::Verify { scenario } => commands::verify(&scenario),
        Command::Sweep {
            scenario,
            param,
            from,
            to,
            steps,
            out,
            simulate,
        } => commands::sweep(&scenario, &param, from, to, steps, out.as_deref(), simulate),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("intrahost: {f}");
            ExitCode::from(f.code())
        }
    }
}
