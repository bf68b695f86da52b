use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavecap_cli::config::EstimatorMethod;
use wavecap_cli::run::{self, Outcome, RunError, RunOptions, WeightsSource};

/// Capacity of a waveguide channel driven through sensor and source patches.
#[derive(Parser)]
#[command(name = "wavecap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write drift, noisy output and modal trajectories for every symbol.
    Simulate(Common),
    /// Optimize the source weights and write result.json and trace.csv.
    Capacity(Common),
    /// Check the optimality inequality for given weights.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights, one per symbol.
        #[arg(long, value_delimiter = ',', conflicts_with = "result", required_unless_present = "result")]
        weights: Option<Vec<f64>>,
        /// A result.json written by `capacity`.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Capacity against the swept parameter of the config's `sweep` section.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    config: PathBuf,
    /// Overrides the config seed and WAVECAP_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "wavecap-out")]
    out: PathBuf,
    /// Overrides the config estimator.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorMethod>,
    /// Print information in bits (artifacts stay in nats).
    #[arg(long)]
    bits: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            config: self.config.clone(),
            out: self.out.clone(),
            seed: self.seed,
            estimator: self.estimator,
            bits: self.bits,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome: Result<Outcome, RunError> = match &cli.command {
        Command::Simulate(c) => run::simulate(&c.options()),
        Command::Capacity(c) => run::capacity(&c.options()),
        Command::Verify {
            common,
            weights,
            result,
        } => {
            let source = match (weights, result) {
                (Some(w), _) => WeightsSource::Explicit(w.clone()),
                (None, Some(p)) => WeightsSource::Report(p.clone()),
                (None, None) => unreachable!("clap requires one weights source"),
            };
            run::verify(&common.options(), &source)
        }
        Command::Sweep(c) => run::sweep(&c.options()),
    };
    match outcome {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Flagged(msg)) => {
            eprintln!("wavecap: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("wavecap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
