//! The quenched walker: at rate 1 it picks one of the `2d` neighbours
//! uniformly and moves there iff the connecting edge is open at that
//! instant. Provides Monte Carlo paths, exact laws through a fixed
//! environment, window kernels and the block discretizations.

mod evolve;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::dist::Dist;
use crate::dynenv::EnvTrajectory;
use crate::error::{invalid, Error, Result};
use crate::kernel::Kernel;
use crate::rng::rng_from_seed;
use crate::stats::binomial_half_pmf;

pub use evolve::{killed_occupation, EventSchedule, Evolver, DEFAULT_TRUNCATION_BUDGET};

/// Largest state count handled by exact evolution unless raised explicitly.
pub const DEFAULT_EXACT_BUDGET: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactBudget(pub usize);

impl Default for ExactBudget {
    fn default() -> Self {
        ExactBudget(DEFAULT_EXACT_BUDGET)
    }
}

impl ExactBudget {
    pub fn check(&self, env: &EnvTrajectory) -> Result<()> {
        let m = env.graph().num_vertices();
        if m > self.0 {
            Err(Error::Capability { what: "exact quenched evolution", needed: m, budget: self.0 })
        } else {
            Ok(())
        }
    }
}

/// A realized path: start, then every actual jump `(time, new vertex)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub start: usize,
    pub jumps: Vec<(f64, usize)>,
    /// Positions at the requested query times, right-continuous.
    pub queries: Vec<(f64, usize)>,
}

impl WalkPath {
    pub fn position_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.start
        } else {
            self.jumps[k - 1].1
        }
    }
}

fn check_vertex(env: &EnvTrajectory, x: usize) -> Result<()> {
    if x >= env.graph().num_vertices() {
        Err(invalid(format!("start vertex {x} out of range")))
    } else {
        Ok(())
    }
}

/// Thinning simulation: rate-1 attempt clock, uniform direction, then the
/// edge is consulted. Walk randomness comes only from `seed`.
pub fn simulate_walk(env: &EnvTrajectory, x0: usize, horizon: f64, seed: u64, query_times: &[f64]) -> Result<WalkPath> {
    check_vertex(env, x0)?;
    env.check_time(horizon)?;
    if let Some(&q) = query_times.iter().find(|&&q| q < 0.0 || q > horizon) {
        return Err(Error::OutOfHorizon { t: q, horizon });
    }
    let g = env.graph();
    let mut rng = rng_from_seed(seed);
    let mut jumps = Vec::new();
    let mut x = x0;
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap;
        if t > horizon {
            break;
        }
        let (y, e) = g.step(x, rng.random_range(0..g.degree()));
        if env.is_open(e, t) {
            x = y;
            jumps.push((t, y));
        }
    }
    let mut path = WalkPath { start: x0, jumps, queries: Vec::new() };
    path.queries = query_times.iter().map(|&q| (q, path.position_at(q))).collect();
    Ok(path)
}

/// Positions at sorted query times without storing the path.
pub fn walk_positions(env: &EnvTrajectory, x0: usize, seed: u64, sorted_times: &[f64]) -> Result<Vec<usize>> {
    check_vertex(env, x0)?;
    let Some(&last) = sorted_times.last() else { return Ok(Vec::new()) };
    env.check_time(last)?;
    let g = env.graph();
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(sorted_times.len());
    let mut x = x0;
    let mut t = 0.0;
    let mut qi = 0;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        let next = t + gap;
        while qi < sorted_times.len() && sorted_times[qi] < next {
            out.push(x);
            qi += 1;
        }
        if qi == sorted_times.len() {
            break;
        }
        t = next;
        let (y, e) = g.step(x, rng.random_range(0..g.degree()));
        if env.is_open(e, t) {
            x = y;
        }
    }
    Ok(out)
}

/// First time the walker occupies a vertex in `target`, or `None` if it
/// has not done so by `horizon`.
pub fn simulate_hitting_time(env: &EnvTrajectory, x0: usize, target: &dyn crate::subset::Membership, horizon: f64, seed: u64) -> Result<Option<f64>> {
    check_vertex(env, x0)?;
    env.check_time(horizon)?;
    if target.contains(x0) {
        return Ok(Some(0.0));
    }
    let g = env.graph();
    let mut rng = rng_from_seed(seed);
    let mut x = x0;
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap;
        if t > horizon {
            return Ok(None);
        }
        let (y, e) = g.step(x, rng.random_range(0..g.degree()));
        if env.is_open(e, t) {
            x = y;
            if target.contains(x) {
                return Ok(Some(t));
            }
        }
    }
}

/// Replays a path against its environment: consecutive vertices adjacent,
/// jump times increasing, and every crossed edge open at the jump time.
pub fn verify_path(env: &EnvTrajectory, path: &WalkPath) -> Result<()> {
    let g = env.graph();
    let mut x = path.start;
    let mut last: Option<f64> = None;
    for &(t, y) in &path.jumps {
        if t < 0.0 || last.is_some_and(|l| t <= l) {
            return Err(invalid(format!("jump times not increasing at {t}")));
        }
        let edge = (0..g.degree())
            .map(|dir| g.step(x, dir))
            .find(|&(u, _)| u == y)
            .map(|(_, e)| e)
            .ok_or_else(|| invalid(format!("jump {x} -> {y} at {t} is not along an edge")))?;
        if !env.state_at(edge, t)? {
            return Err(invalid(format!("jump {x} -> {y} at {t} crossed closed edge {edge}")));
        }
        x = y;
        last = Some(t);
    }
    Ok(())
}

/// Exact quenched law `P_{x0,η}(X_t = ·)`, with certified truncation error
/// at most `1e-10` in total variation.
pub fn exact_quenched_distribution(env: &EnvTrajectory, x0: usize, t: f64) -> Result<Dist> {
    exact_quenched_distribution_with(env, x0, t, ExactBudget::default())
}

pub fn exact_quenched_distribution_with(env: &EnvTrajectory, x0: usize, t: f64, budget: ExactBudget) -> Result<Dist> {
    budget.check(env)?;
    check_vertex(env, x0)?;
    let schedule = EventSchedule::new(env, 0.0, t)?;
    let m = env.graph().num_vertices();
    let mut init = vec![0.0; m];
    init[x0] = 1.0;
    let mut ev = Evolver::new(env, &schedule, init);
    ev.advance_to(t)?;
    Ok(Dist::from_vec_unchecked(ev.into_vector()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Laziness {
    Plain,
    /// `(K + I) / 2`.
    HalfLazy,
}

/// The walk's transition kernel over one environment window.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkKernel {
    pub window: (f64, f64),
    pub kernel: Kernel,
    pub laziness: Laziness,
}

impl WalkKernel {
    pub fn size(&self) -> usize {
        self.kernel.size()
    }
}

/// Row `x` is the exact law at `b` of the walk started at `x` at time `a`.
pub fn window_kernel(env: &EnvTrajectory, a: f64, b: f64, laziness: Laziness) -> Result<WalkKernel> {
    window_kernel_with(env, a, b, laziness, ExactBudget::default())
}

pub fn window_kernel_with(env: &EnvTrajectory, a: f64, b: f64, laziness: Laziness, budget: ExactBudget) -> Result<WalkKernel> {
    budget.check(env)?;
    let schedule = EventSchedule::new(env, a, b)?;
    let m = env.graph().num_vertices();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|x| {
            let mut init = vec![0.0; m];
            init[x] = 1.0;
            let mut ev = Evolver::new(env, &schedule, init);
            ev.advance_to(b)?;
            Ok(ev.into_vector())
        })
        .collect::<Result<_>>()?;
    let plain = Kernel::from_raw(m, rows.into_iter().flatten().collect())?;
    let kernel = match laziness {
        Laziness::Plain => plain,
        Laziness::HalfLazy => plain.half_lazy(),
    };
    Ok(WalkKernel { window: (a, b), kernel, laziness })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockLength {
    /// Blocks `[k−1, k]`.
    Unit,
    /// Blocks `[(k−1)/μ, k/μ]`.
    InverseMu,
}

impl BlockLength {
    pub fn length(&self, mu: f64) -> Result<f64> {
        match self {
            BlockLength::Unit => Ok(1.0),
            BlockLength::InverseMu if mu > 0.0 => Ok(1.0 / mu),
            BlockLength::InverseMu => Err(invalid("1/mu blocks need mu > 0")),
        }
    }
}

/// Kernels of consecutive blocks covering the horizon; a trailing partial
/// block is dropped with a warning.
pub fn block_chain(env: &EnvTrajectory, block: BlockLength, laziness: Laziness) -> Result<Vec<WalkKernel>> {
    let len = block.length(env.params().mu())?;
    let horizon = env.horizon();
    let count = (horizon / len + 1e-9).floor() as usize;
    if (count as f64 * len - horizon).abs() > 1e-9 * horizon.max(1.0) {
        log::warn!("horizon {horizon} is not a multiple of block length {len}; truncating to {count} blocks");
    }
    (0..count).map(|k| window_kernel(env, k as f64 * len, ((k + 1) as f64 * len).min(horizon), laziness)).collect()
}

/// Law after `steps` steps of the laziness-coupled block chain: at each
/// step the walker stays put with probability 1/2 and the environment
/// block only advances on actual moves, so the law is
/// `Σ_j Bin(steps, 1/2)(j) · δ_{x0} K_1 ⋯ K_j`.
pub fn lazy_coupled_law(blocks: &[WalkKernel], x0: usize, steps: usize) -> Result<Dist> {
    let m = blocks.first().map(WalkKernel::size).ok_or_else(|| invalid("no blocks"))?;
    if blocks.len() < steps {
        return Err(invalid(format!("{steps} lazy steps need {steps} blocks, have {}", blocks.len())));
    }
    let mut cur = vec![0.0; m];
    cur[x0] = 1.0;
    let mut out: Vec<f64> = cur.iter().map(|v| v * binomial_half_pmf(steps, 0)).collect();
    for (j, block) in blocks.iter().take(steps).enumerate() {
        cur = block.kernel.apply_left(&cur);
        let w = binomial_half_pmf(steps, j + 1);
        out.iter_mut().zip(&cur).for_each(|(o, c)| *o += w * c);
    }
    Ok(Dist::from_vec_unchecked(out))
}
