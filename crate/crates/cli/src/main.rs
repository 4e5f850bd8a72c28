//! `sgdlab`: runs the laboratory's experiments from JSON configs and writes
//! plain data files plus a `manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid config, 3 numeric
//! failure, 4 non-convergence.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgdlab::doublewell::DoubleWellConfig;

use crate::commands::decompose::DecomposeConfig;
use crate::commands::diagnose::DiagnoseConfig;
use crate::commands::fpk::FpkConfig;
use crate::commands::simulate::SimulateConfig;
use crate::commands::spectrum::SpectrumConfig;
use crate::config::{read_config_file, resolve, CommandConfig};
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "sgdlab", version, about = "SGD as a stochastic process: experiments at desk scale")]
struct Cli {
    /// JSON config file for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed written into every seed field of the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, value_name = "N", env = "LAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Dotted overrides such as `sde.steps=100000`; values are parsed as JSON
    /// and fall back to strings.
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Eigenspectra of the diffusion matrix along a training run.
    Spectrum(Overrides),
    /// A discrete SGD or continuous SDE trajectory.
    Simulate(Overrides),
    /// Fokker–Planck steady state, potential, current and free-energy trace.
    Fpk(Overrides),
    /// F = (D + Q) U for a linear drift.
    Decompose(Overrides),
    /// The rotating double-well experiment across a list of lambdas.
    Doublewell(Overrides),
    /// Increment spectrum, autocorrelation and winding of a trajectory file.
    Diagnose(Overrides),
}

fn execute<C: CommandConfig>(
    cli: &Cli,
    name: &str,
    overrides: &Overrides,
    run: fn(&C, &mut OutputDir) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(read_config_file).transpose()?;
    let (cfg, resolved) = resolve::<C>(file, &overrides.set, cli.seed)?;
    let mut out = OutputDir::create(&cli.out)?;
    let result = run(&cfg, &mut out);
    let status = result.as_ref().err().map_or("ok", CliError::status);
    out.finish(name, cli.seed.or(cfg.seed()), &resolved, status)?;
    result
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Spectrum(o) => execute::<SpectrumConfig>(cli, "spectrum", o, commands::spectrum::run),
        Command::Simulate(o) => execute::<SimulateConfig>(cli, "simulate", o, commands::simulate::run),
        Command::Fpk(o) => execute::<FpkConfig>(cli, "fpk", o, commands::fpk::run),
        Command::Decompose(o) => execute::<DecomposeConfig>(cli, "decompose", o, commands::decompose::run),
        Command::Doublewell(o) => execute::<DoubleWellConfig>(cli, "doublewell", o, commands::doublewell::run),
        Command::Diagnose(o) => execute::<DiagnoseConfig>(cli, "diagnose", o, commands::diagnose::run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
