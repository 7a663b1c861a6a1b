//! `sclo` — command-line pipeline for stochastic closure modeling:
//! generate solver datasets, train the diffusion score network, sample
//! closure terms, run closure-in-the-loop simulations, and evaluate
//! results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sclo_core::io::config::{RawConfig, RunConfig};
use sclo_core::Error;

mod evaluate;
mod generate;
mod sample;
mod simulate;
mod train;

#[derive(Parser)]
#[command(
    name = "sclo",
    version,
    about = "Stochastic closure modeling: data generation, score training, sampling, and rollout"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration source shared by every subcommand: an optional file plus
/// repeatable key overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines with `[section]` headers)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set physics.nu=2e-3` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::from_file(path)?,
            None => RawConfig::new(),
        };
        for pair in &self.overrides {
            raw.set_pair(pair)?;
        }
        RunConfig::from_raw(&raw)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the stochastic solver and record a closure dataset
    Generate(generate::GenerateArgs),
    /// Train the conditional score network on a dataset
    Train(train::TrainArgs),
    /// Sample closure terms from a checkpoint and score them against truth
    Sample(sample::SampleArgs),
    /// Closure-in-the-loop simulation across sampler settings
    Simulate(simulate::SimulateArgs),
    /// Metrics, energy spectra, and correlation maps from datasets
    Evaluate(evaluate::EvaluateArgs),
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate(args) => generate::run(&args),
        Command::Train(args) => train::run(&args),
        Command::Sample(args) => sample::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Evaluate(args) => evaluate::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) | Error::Shape(_) | Error::GridMismatch(_) => 2,
                Error::Diverged { .. }
                | Error::SamplerDiverged { .. }
                | Error::SymmetryViolation { .. } => 3,
                Error::Io(_) | Error::Format(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}
