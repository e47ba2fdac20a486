//! `twophase`: simulate studies, estimate selection probabilities, solve
//! optimal second-phase designs and estimate the population mean.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use twophase::Error;

use crate::config::RunConfig;
use crate::output::Stamp;

#[derive(Debug, Parser)]
#[command(name = "twophase", version, about = "Budget-optimal two-phase sampling designs")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "TWOPHASE_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "TWOPHASE_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "TWOPHASE_OUTPUT")]
    output: Option<PathBuf>,
    /// Worker threads for parallel loops.
    #[arg(long, global = true, env = "TWOPHASE_WORKERS")]
    workers: Option<usize>,
    /// Also write the relative-efficiency bar values (simulate).
    #[arg(long, global = true, env = "TWOPHASE_EMIT_PLOT_DATA")]
    emit_plot_data: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo comparison of sampling approaches.
    Simulate {
        /// Overrides the configured number of replications.
        #[arg(long, env = "TWOPHASE_N_REPS")]
        n_reps: Option<usize>,
    },
    /// Estimate first-phase selection probabilities.
    Select,
    /// Solve the optimal second-phase sampling rule.
    Design,
    /// Estimate the population mean with bootstrap inference.
    Estimate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Select => "select",
            Command::Design => "design",
            Command::Estimate => "estimate",
        }
    }
}

const DEFAULT_SEED: u64 = 20_240_101;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible { .. }) => 3,
        Some(
            Error::RankDeficient { .. }
            | Error::Separation { .. }
            | Error::Numerical(_)
            | Error::NonConvergence { .. }
            | Error::StudyAborted { .. },
        ) => 4,
        _ => 2,
    }
}

fn configure_workers(workers: Option<usize>) -> Result<()> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        anyhow::bail!(Error::Config("--workers must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("configuring worker threads: {e}"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let command = cli.command.name();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.output.is_some() {
        cfg.output = cli.output.clone();
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let level = cfg.log_level.clone().unwrap_or_else(|| "warn".into());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let seed = cfg
        .seed
        .or_else(|| (command == "simulate").then(|| cfg.simulate.as_ref().map(|s| s.seed)).flatten())
        .unwrap_or(DEFAULT_SEED);
    cfg.seed = Some(seed);
    if let Command::Simulate { n_reps: Some(n) } = cli.command {
        cfg.simulate.get_or_insert_with(Default::default).n_reps = n;
    }
    if let Some(sim) = cfg.simulate.as_mut() {
        sim.seed = seed;
    }
    configure_workers(cfg.workers)?;
    cfg.check_inputs_exist(command)?;
    let stamp = Stamp {
        command,
        config_sha256: cfg.digest(command),
        seed,
        dir: cfg.output.clone().unwrap_or_else(|| PathBuf::from(".")),
    };
    let missing = || Error::Config(format!("configuration has no [{command}] table"));
    match cli.command {
        Command::Simulate { .. } => {
            let sim = cfg.simulate.get_or_insert_with(Default::default);
            commands::simulate(sim, &stamp, cli.emit_plot_data)
        }
        Command::Select => commands::select(cfg.select.as_ref().ok_or_else(missing)?, &stamp),
        Command::Design => commands::design(cfg.design.as_ref().ok_or_else(missing)?, &stamp),
        Command::Estimate => commands::estimate(cfg.estimate.as_ref().ok_or_else(missing)?, &stamp),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
