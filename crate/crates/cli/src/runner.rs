//! Cell execution: a worker pool, a per-cell wall-clock budget, per-cell
//! CSV files merged in cell order, and the JSON-lines run manifest.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dynaperc_core::dist::{write_csv, ResultRecord};
use dynaperc_core::rng::{derive_seed, Stream};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const WORKERS_VAR: &str = "DYNAPERC_WORKERS";

/// One point of a parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub d: usize,
    pub n: usize,
    pub p: f64,
    pub mu: f64,
    pub eps: Option<f64>,
    pub beta: Option<f64>,
}

impl Cell {
    pub fn new(d: usize, n: usize, p: f64, mu: f64) -> Self {
        Self { id: format!("d{d}-n{n}-p{p}-mu{mu}"), d, n, p, mu, eps: None, beta: None }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.id = format!("{}-eps{eps}", self.id);
        self.eps = Some(eps);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.id = format!("{}-beta{beta}", self.id);
        self.beta = Some(beta);
        self
    }

    /// A cell that is not a torus point, e.g. a chain size.
    pub fn named(id: impl Into<String>, n: usize) -> Self {
        Self { id: id.into(), d: 0, n, p: 0.0, mu: 0.0, eps: None, beta: None }
    }

    pub fn record(&self, statistic: &str, method: &str, value: f64) -> ResultRecord {
        let mut r = ResultRecord::new(self.id.clone(), self.d, self.n, self.p, self.mu, statistic, method);
        r.eps = self.eps;
        r.value = value.is_finite().then_some(value);
        r
    }
}

/// The torus grid `d × n × p × μ`, in config order.
pub fn torus_cells(config: &ExperimentConfig) -> Vec<Cell> {
    let g = &config.grid;
    let mut out = Vec::new();
    for &d in &g.d {
        for &n in &g.n {
            for &p in &g.p {
                for &mu in &g.mu {
                    out.push(Cell::new(d, n, p, mu));
                }
            }
        }
    }
    out
}

/// Seed of a cell: a function of the master seed and the cell id only, so
/// adding cells to a grid leaves the others unchanged.
pub fn cell_seed(master: u64, id: &str) -> u64 {
    let h = Sha256::digest(id.as_bytes());
    derive_seed(master, Stream::Instance, u64::from_le_bytes(h[..8].try_into().expect("8 bytes")))
}

pub struct Ctx<'a> {
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub out_dir: &'a Path,
    deadline: Option<Instant>,
}

impl Ctx<'_> {
    pub fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

#[derive(Debug, Default)]
pub struct CellOutput {
    pub records: Vec<ResultRecord>,
    /// Named theorem-level assertions; any `false` fails the run.
    pub assertions: Vec<(String, bool)>,
    /// The budget ran out before all samples were taken.
    pub censored: bool,
    /// Extra artifacts written by the cell.
    pub files: Vec<PathBuf>,
}

impl CellOutput {
    pub fn assert(&mut self, name: impl Into<String>, ok: bool) {
        self.assertions.push((name.into(), ok));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    AssertionFailed,
    Censored,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub cell_id: String,
    pub status: CellStatus,
    pub wall_clock_s: f64,
    pub assertions: Vec<(String, bool)>,
    pub error: Option<String>,
}

pub struct CellResults {
    pub records: Vec<ResultRecord>,
    pub cells: Vec<CellSummary>,
    pub files: Vec<PathBuf>,
}

fn workers() -> Option<usize> {
    let raw = std::env::var(WORKERS_VAR).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(w) if w > 0 => Some(w),
        _ => {
            log::warn!("ignoring {WORKERS_VAR}={raw:?}: expected a positive integer");
            None
        }
    }
}

/// Runs `f` on every cell, concurrently up to the worker cap. Failures are
/// recorded per cell and the run continues.
pub fn run_cells<F>(name: &str, config: &ExperimentConfig, cells: &[Cell], f: F) -> io::Result<CellResults>
where
    F: Fn(&Cell, &Ctx) -> dynaperc_core::Result<CellOutput> + Sync,
{
    let out_dir = config.output.dir.clone();
    let cell_dir = out_dir.join("cells").join(name);
    fs::create_dir_all(&cell_dir)?;
    let hash = config.hash();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers() {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(io::Error::other)?;
    let run_one = |cell: &Cell| -> io::Result<(Vec<ResultRecord>, CellSummary, Vec<PathBuf>)> {
        let start = Instant::now();
        let seed = cell_seed(config.seed, &cell.id);
        let ctx = Ctx { config, seed, out_dir: &out_dir, deadline: config.budget_seconds.map(|b| start + std::time::Duration::from_secs_f64(b)) };
        let (mut records, status, assertions, error, mut files) = match f(cell, &ctx) {
            Ok(o) => {
                let status = if o.assertions.iter().any(|(_, ok)| !ok) {
                    CellStatus::AssertionFailed
                } else if o.censored {
                    CellStatus::Censored
                } else {
                    CellStatus::Ok
                };
                (o.records, status, o.assertions, None, o.files)
            }
            Err(e) => {
                log::error!("cell {}: {e}", cell.id);
                (Vec::new(), CellStatus::Failed, Vec::new(), Some(e.to_string()), Vec::new())
            }
        };
        for r in &mut records {
            r.config_hash = hash.clone();
            r.cell_id = cell.id.clone();
            r.env_seed.get_or_insert(seed);
        }
        let path = cell_dir.join(format!("{}.csv", cell.id));
        write_csv(&records, BufWriter::new(fs::File::create(&path)?)).map_err(io::Error::other)?;
        files.push(path);
        let summary = CellSummary { cell_id: cell.id.clone(), status, wall_clock_s: start.elapsed().as_secs_f64(), assertions, error };
        Ok((records, summary, files))
    };
    let results: Vec<_> = pool.install(|| cells.par_iter().map(run_one).collect::<io::Result<Vec<_>>>())?;
    let mut out = CellResults { records: Vec::new(), cells: Vec::new(), files: Vec::new() };
    for (records, summary, files) in results {
        out.records.extend(records);
        out.cells.push(summary);
        out.files.extend(files);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub struct RunSummary {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub records: Vec<ResultRecord>,
    pub cells: Vec<CellSummary>,
    pub success: bool,
}

/// Writes the merged CSV (cell order, then `extra` rows) and the manifest.
pub fn finish(
    name: &str,
    command: &str,
    config: &ExperimentConfig,
    mut results: CellResults,
    extra: Vec<ResultRecord>,
    started: Instant,
) -> io::Result<RunSummary> {
    let dir = &config.output.dir;
    let hash = config.hash();
    for mut r in extra {
        r.config_hash = hash.clone();
        results.records.push(r);
    }
    let csv = dir.join(format!("{name}.csv"));
    write_csv(&results.records, BufWriter::new(fs::File::create(&csv)?)).map_err(io::Error::other)?;
    let success = results.cells.iter().all(|c| c.status == CellStatus::Ok);

    let manifest = dir.join(format!("{name}.manifest.jsonl"));
    let mut w = BufWriter::new(fs::File::create(&manifest)?);
    let mut line = |v: serde_json::Value| -> io::Result<()> {
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")
    };
    let files = {
        let mut files = results.files.clone();
        files.push(csv.clone());
        files.sort();
        files
    };
    line(serde_json::json!({
        "kind": "run",
        "config_hash": hash,
        "code_version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "scenario": config.scenario,
        "seed": config.seed,
        "mode": config.mode.tag(),
        "config": config,
        "cells": results.cells.len(),
    }))?;
    for c in &results.cells {
        line(serde_json::json!({ "kind": "cell", "cell": c }))?;
    }
    for f in &files {
        let rel = f.strip_prefix(dir).unwrap_or(f);
        line(serde_json::json!({ "kind": "output", "path": rel, "sha256": sha256_file(f)? }))?;
    }
    line(serde_json::json!({ "kind": "summary", "success": success, "wall_clock_s": started.elapsed().as_secs_f64() }))?;
    w.flush()?;
    Ok(RunSummary { csv, manifest, records: results.records, cells: results.cells, success })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seed_depends_on_id_and_master() {
        assert_eq!(cell_seed(1, "a"), cell_seed(1, "a"));
        assert_ne!(cell_seed(1, "a"), cell_seed(1, "b"));
        assert_ne!(cell_seed(1, "a"), cell_seed(2, "a"));
    }

    #[test]
    fn cell_ids_are_distinct_over_a_grid() {
        let mut c = ExperimentConfig::default();
        c.grid.n = vec![4, 8];
        c.grid.mu = vec![0.5, 0.125];
        let cells = torus_cells(&c);
        let mut ids: Vec<_> = cells.iter().map(|c| c.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 4);
        assert_eq!(cells[0].clone().with_eps(0.25).id, "d1-n4-p0.5-mu0.5-eps0.25");
    }
}
