//! Experiment configuration: TOML merged over per-command defaults, then
//! command-line overrides, then validation of every grid cell.

use std::fmt;
use std::path::{Path, PathBuf};

use dynaperc_core::{DynParams, TorusGraph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeFlag {
    Exact,
    Mc,
}

impl ModeFlag {
    pub fn tag(self) -> &'static str {
        match self {
            ModeFlag::Exact => "exact",
            ModeFlag::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub seed: u64,
    pub mode: ModeFlag,
    /// Wall-clock cap per cell, in seconds.
    pub budget_seconds: Option<f64>,
    pub grid: GridConfig,
    pub samples: SampleConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: Vec<usize>,
    pub n: Vec<usize>,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    pub eps: Vec<f64>,
    pub beta: Vec<f64>,
    /// Edge-count thresholds for the binomial lemma.
    pub sigma: Vec<f64>,
    /// State counts for the evolving-set suite.
    pub states: Vec<usize>,
    /// Environment horizon for `env-sim` and `walk-sim`.
    pub horizon: f64,
    /// Mixing grid length in blocks of `1/μ`; `0` means `2 n²`.
    pub horizon_blocks: usize,
    /// Hitting horizon as a multiple of `n²/μ`.
    pub hitting_factor: f64,
    /// Initial environment: "stationary", "all-closed" or "all-open".
    pub init: String,
    /// Isoperimetric constant `c'_d` for tori too large to enumerate
    /// (more than 24 vertices, `d ≥ 2`). For `d = 1` it is 2.
    pub iso_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub envs: usize,
    pub replicas: usize,
    pub chains: usize,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: String::new(),
            seed: 1,
            mode: ModeFlag::Exact,
            budget_seconds: None,
            grid: GridConfig {
                d: vec![1],
                n: vec![8],
                p: vec![0.5],
                mu: vec![0.5],
                eps: vec![0.25],
                beta: vec![0.1],
                sigma: vec![],
                states: vec![4],
                horizon: 10.0,
                horizon_blocks: 0,
                hitting_factor: 4.0,
                init: "stationary".into(),
                iso_constant: None,
            },
            samples: SampleConfig { envs: 10, replicas: 2000, chains: 100, paths: 1000 },
            output: OutputConfig { dir: PathBuf::from("out") },
        }
    }
}

/// Invalid configuration, one diagnostic per offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for d in &self.0 {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// `defaults` overlaid with the TOML document `text`.
    pub fn from_toml(defaults: &ExperimentConfig, text: &str) -> Result<Self, ConfigError> {
        let over: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(vec![e.to_string()]))?;
        let mut base = toml::Table::try_from(defaults).map_err(|e| ConfigError(vec![e.to_string()]))?;
        merge(&mut base, over);
        toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| ConfigError(vec![e.to_string().trim().to_string()]))
    }

    pub fn load(defaults: &ExperimentConfig, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(defaults, &text)
    }

    /// Short SHA-256 of the configuration, excluding the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Checks every field and every (d, n, p, μ) cell against the library
    /// preconditions, collecting all problems.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let g = &self.grid;
        for (name, empty) in [("grid.d", g.d.is_empty()), ("grid.n", g.n.is_empty()), ("grid.p", g.p.is_empty()), ("grid.mu", g.mu.is_empty())] {
            if empty {
                errs.push(format!("{name}: must not be empty"));
            }
        }
        for &d in &g.d {
            for &n in &g.n {
                if let Err(e) = TorusGraph::new(d, n) {
                    errs.push(format!("grid.d/grid.n: (d = {d}, n = {n}): {e}"));
                }
            }
        }
        for &p in &g.p {
            for &mu in &g.mu {
                if let Err(e) = DynParams::new(p, mu, 1.0) {
                    errs.push(format!("grid.p/grid.mu: (p = {p}, mu = {mu}): {e}"));
                }
            }
        }
        for (i, &e) in g.eps.iter().enumerate() {
            if !(e > 0.0 && e < 1.0) {
                errs.push(format!("grid.eps[{i}]: {e} is not in (0, 1)"));
            }
        }
        for (i, &b) in g.beta.iter().enumerate() {
            if !(b > 0.0 && b.is_finite()) {
                errs.push(format!("grid.beta[{i}]: {b} must be positive"));
            }
        }
        for (i, &s) in g.sigma.iter().enumerate() {
            if !(s > 0.0 && s <= 1.0) {
                errs.push(format!("grid.sigma[{i}]: {s} is not in (0, 1]"));
            }
        }
        for (i, &m) in g.states.iter().enumerate() {
            if !(2..=dynaperc_core::evoset::EXACT_SET_LIMIT).contains(&m) {
                errs.push(format!("grid.states[{i}]: {m} is not in [2, {}]", dynaperc_core::evoset::EXACT_SET_LIMIT));
            }
        }
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            errs.push(format!("grid.horizon: {} must be positive", g.horizon));
        }
        if !(g.hitting_factor > 0.0 && g.hitting_factor.is_finite()) {
            errs.push(format!("grid.hitting_factor: {} must be positive", g.hitting_factor));
        }
        if !matches!(g.init.as_str(), "stationary" | "all-closed" | "all-open") {
            errs.push(format!("grid.init: {:?} is not one of stationary, all-closed, all-open", g.init));
        }
        if let Some(c) = g.iso_constant {
            if !(c > 0.0 && c.is_finite()) {
                errs.push(format!("grid.iso_constant: {c} must be positive"));
            }
        }
        if self.samples.envs == 0 {
            errs.push("samples.envs: must be at least 1".into());
        }
        if self.samples.replicas == 0 {
            errs.push("samples.replicas: must be at least 1".into());
        }
        if let Some(b) = self.budget_seconds {
            if !(b > 0.0) {
                errs.push(format!("budget_seconds: {b} must be positive"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    pub fn init_condition(&self) -> dynaperc_core::InitialCondition {
        use dynaperc_core::InitialCondition::*;
        match self.grid.init.as_str() {
            "all-closed" => AllClosed,
            "all-open" => AllOpen,
            _ => Stationary,
        }
    }
}
