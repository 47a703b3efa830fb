//! `riskbal`: batch pipeline from a patient cohort to weights, hospital
//! estimates, diagnostics, pooling and shrinkage, plus the simulator.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "riskbal", version, about = "Risk-standardized hospital quality via balancing weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve per-hospital balancing weights (weights.csv, summary.csv)
    Weights,
    /// Raw, weighted and bias-corrected hospital means (estimates.csv)
    Estimate,
    /// Bias reduction and covariate balance (bias.csv, balance.csv)
    Diagnose,
    /// Bias/effective-sample-size frontier over a lambda grid (sweep.csv)
    Sweep,
    /// Between-hospital heterogeneity (heterogeneity.csv)
    Pool,
    /// Normal-normal shrinkage by Gibbs sampling (posterior.csv)
    Shrink,
    /// Simulation study (cohort.csv, sim_results.csv)
    Simulate,
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// key=value settings file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Patient cohort CSV
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    upper: Option<f64>,
    #[arg(long, global = true)]
    lower: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn resolve(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &flags.config {
        config.apply_file(path).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let Some(v) = &flags.input {
        config.input = Some(v.clone());
    }
    if let Some(v) = &flags.out {
        config.out = v.clone();
    }
    if let Some(v) = flags.lambda {
        config.lambda = v;
    }
    if let Some(v) = flags.upper {
        config.upper = v;
    }
    if let Some(v) = flags.lower {
        config.lower = v;
    }
    if let Some(v) = flags.seed {
        config.seed = v;
    }
    if let Some(v) = flags.threads {
        config.threads = v;
    }
    config.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(&cli.flags)?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    std::fs::create_dir_all(&config.out).map_err(|e| CliError::Other(format!("{}: {e}", config.out.display())))?;
    match cli.command {
        Command::Weights => commands::weights(&config),
        Command::Estimate => commands::estimate(&config),
        Command::Diagnose => commands::diagnose(&config),
        Command::Sweep => commands::sweep(&config),
        Command::Pool => commands::pool(&config),
        Command::Shrink => commands::shrink(&config),
        Command::Simulate => commands::simulate(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("riskbal: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
