//! Command-line driver for the dynamical percolation lab.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod runner;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{LabScenario, SweepScenario};
use crate::config::{ConfigError, ExperimentConfig, ModeFlag};
use crate::runner::RunSummary;

#[derive(Debug, Parser)]
#[command(name = "dynaperc", version, about = "Random walk on dynamical percolation: simulation and checks")]
pub struct Cli {
    /// TOML configuration merged over the command's defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Exact propagation or Monte Carlo.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeFlag>,
    /// Wall-clock budget per cell, in seconds.
    #[arg(long, global = true)]
    pub budget: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample environments; edge flip rates, open fractions and edge-count tails.
    EnvSim,
    /// Simulate walks; annealed TV to uniform at four times.
    WalkSim,
    /// Quenched and annealed mixing times.
    Mix,
    /// Worst-start hitting time of a half-volume target.
    Hit,
    /// Exact evolving-set identities on random small chains.
    Evoset,
    /// Expansion lower bound on unit windows and measured profiles.
    Expansion,
    /// Profile integrals and the mixing bound, or tail checks for `--chain`.
    Bound {
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Finite-environment chains.
    Lab {
        #[arg(long, value_enum, default_value = "counterexample")]
        scenario: LabScenario,
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Parameter sweeps with power-law fits.
    Sweep {
        #[arg(long, value_enum)]
        scenario: SweepScenario,
    },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::EnvSim => "env-sim".into(),
            Command::WalkSim => "walk-sim".into(),
            Command::Mix => "mix".into(),
            Command::Hit => "hit".into(),
            Command::Evoset => "evoset".into(),
            Command::Expansion => "expansion".into(),
            Command::Bound { .. } => "bound".into(),
            Command::Lab { scenario, .. } => format!("lab-{}", clap::ValueEnum::to_possible_value(scenario).expect("named").get_name()),
            Command::Sweep { scenario } => format!("sweep-{}", scenario.name()),
        }
    }

    /// Defaults before the config file and flags are applied.
    pub fn defaults(&self) -> ExperimentConfig {
        let mut c = match self {
            Command::Sweep { scenario } => scenario.defaults(),
            Command::WalkSim => ExperimentConfig { mode: ModeFlag::Mc, ..ExperimentConfig::default() },
            Command::EnvSim => {
                let mut c = ExperimentConfig::default();
                c.grid.sigma = vec![0.05, 0.1];
                c
            }
            Command::Evoset => {
                let mut c = ExperimentConfig::default();
                c.grid.states = vec![2, 3, 4, 5, 6];
                c
            }
            Command::Lab { .. } => {
                let mut c = ExperimentConfig::default();
                c.grid.eps = vec![0.04, 0.1];
                c.samples.chains = 12;
                c
            }
            _ => ExperimentConfig::default(),
        };
        c.scenario = self.name();
        c
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io(std::io::Error),
    Core(dynaperc_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<dynaperc_core::Error> for CliError {
    fn from(e: dynaperc_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// Resolves the configuration: command defaults, then `--config`, then flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let defaults = cli.command.defaults();
    let mut c = match &cli.config {
        Some(path) => ExperimentConfig::load(&defaults, path)?,
        None => defaults,
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(m) = cli.mode {
        c.mode = m;
    }
    if let Some(b) = cli.budget {
        c.budget_seconds = Some(b);
    }
    if let Some(o) = &cli.out {
        c.output.dir = o.clone();
    }
    c.validate()?;
    Ok(c)
}

pub fn execute(cli: &Cli) -> Result<RunSummary, CliError> {
    let config = resolve_config(cli)?;
    std::fs::create_dir_all(&config.output.dir)?;
    log::info!("{} config {} seed {}", config.scenario, config.hash(), config.seed);
    match &cli.command {
        Command::EnvSim => commands::env_sim(&config),
        Command::WalkSim => commands::walk_sim(&config),
        Command::Mix => commands::mix(&config),
        Command::Hit => commands::hit(&config),
        Command::Evoset => commands::evoset(&config),
        Command::Expansion => commands::expansion(&config),
        Command::Bound { chain } => commands::bound(&config, chain.as_deref()),
        Command::Lab { scenario, chain } => commands::lab(&config, *scenario, chain.as_deref()),
        Command::Sweep { scenario } => commands::sweep(&config, *scenario),
    }
}
