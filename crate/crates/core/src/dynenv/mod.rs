//! Dynamical percolation on the torus: every edge is an independent
//! two-state jump process, closed → open at rate `pμ` and open → closed at
//! rate `(1−p)μ`. Trajectories are sampled in full up to a horizon and then
//! queried read-only.

mod format;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};

use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::stats::{binomial_upper_tail, wilson, Interval, Z95};
use crate::torus::{TorusGraph, VertexSet};

pub use format::{read_env, write_env, FORMAT_VERSION};

/// Open density `p`, refresh parameter `μ` and sampling horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynParams {
    p: f64,
    mu: f64,
    horizon: f64,
}

impl DynParams {
    /// `0 < p ≤ 1`, `0 ≤ μ ≤ 1/2`, `T ≥ 0`. `μ = 0` is the frozen
    /// environment.
    pub fn new(p: f64, mu: f64, horizon: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid(format!("p must lie in (0, 1], got {p}")));
        }
        if !(0.0..=0.5).contains(&mu) {
            return Err(invalid(format!("mu must lie in [0, 1/2], got {mu}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        Ok(Self { p, mu, horizon })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn open_rate(&self) -> f64 {
        self.p * self.mu
    }

    pub fn close_rate(&self) -> f64 {
        (1.0 - self.p) * self.mu
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.p, self.mu, horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitialCondition {
    /// i.i.d. Bernoulli(p) edges.
    Stationary,
    AllClosed,
    AllOpen,
    Explicit(Vec<bool>),
}

impl InitialCondition {
    pub fn tag(&self) -> &'static str {
        match self {
            InitialCondition::Stationary => "stationary",
            InitialCondition::AllClosed => "all-closed",
            InitialCondition::AllOpen => "all-open",
            InitialCondition::Explicit(_) => "explicit",
        }
    }
}

/// How the per-edge paths are generated. Both give the same law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingScheme {
    /// Exponential holding times with the state-dependent rates.
    #[default]
    Flip,
    /// Rate-`μ` refresh clock; at each ring the state is redrawn from
    /// Bernoulli(p) and only actual changes are recorded.
    Refresh,
}

/// One edge's right-continuous 0/1 path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTrajectory {
    initial: bool,
    flips: Vec<f64>,
}

impl EdgeTrajectory {
    pub fn new(initial: bool, flips: Vec<f64>) -> Result<Self> {
        if flips.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("flip times must be strictly increasing"));
        }
        if flips.first().is_some_and(|&t| !(t >= 0.0)) {
            return Err(invalid("flip times must be nonnegative"));
        }
        Ok(Self { initial, flips })
    }

    pub fn sample(rng: &mut Rng, params: &DynParams, initial: bool, scheme: SamplingScheme) -> Self {
        let horizon = params.horizon;
        let mut flips = Vec::new();
        match scheme {
            SamplingScheme::Flip => {
                let open = Exp::new(params.open_rate()).ok().filter(|_| params.open_rate() > 0.0);
                let close = Exp::new(params.close_rate()).ok().filter(|_| params.close_rate() > 0.0);
                let mut state = initial;
                let mut t = 0.0;
                loop {
                    let clock = if state { &close } else { &open };
                    let Some(dist) = clock else { break };
                    t += dist.sample(rng);
                    if t > horizon {
                        break;
                    }
                    flips.push(t);
                    state = !state;
                }
            }
            SamplingScheme::Refresh => {
                if params.mu > 0.0 {
                    let clock = Exp::new(params.mu).expect("positive rate");
                    let mut state = initial;
                    let mut t = 0.0;
                    loop {
                        t += clock.sample(rng);
                        if t > horizon {
                            break;
                        }
                        let fresh = rng.random::<f64>() < params.p;
                        if fresh != state {
                            flips.push(t);
                            state = fresh;
                        }
                    }
                }
            }
        }
        Self { initial, flips }
    }

    pub fn initial(&self) -> bool {
        self.initial
    }

    pub fn flips(&self) -> &[f64] {
        &self.flips
    }

    /// Right-continuous evaluation: at a flip instant the new state holds.
    #[inline]
    pub fn state_at(&self, t: f64) -> bool {
        let k = self.flips.partition_point(|&f| f <= t);
        self.initial ^ (k % 2 == 1)
    }

    /// Whether the state is constant and equal to `state` on `[a, b]`.
    pub fn constant_on(&self, a: f64, b: f64, state: bool) -> bool {
        let ka = self.flips.partition_point(|&f| f <= a);
        let kb = self.flips.partition_point(|&f| f <= b);
        ka == kb && (self.initial ^ (ka % 2 == 1)) == state
    }
}

/// A full realization `η = (η_t)_{0 ≤ t ≤ T}` on a torus.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvTrajectory {
    graph: TorusGraph,
    params: DynParams,
    edges: Vec<EdgeTrajectory>,
    init: InitialCondition,
    seed: u64,
}

impl EnvTrajectory {
    /// Assembles a trajectory from explicit edge paths (used by the loader
    /// and by tests that need hand-built environments).
    pub fn from_parts(graph: TorusGraph, params: DynParams, edges: Vec<EdgeTrajectory>, init: InitialCondition, seed: u64) -> Result<Self> {
        if edges.len() != graph.num_edges() {
            return Err(invalid(format!("expected {} edge paths, got {}", graph.num_edges(), edges.len())));
        }
        if let Some(e) = edges.iter().position(|e| e.flips.last().is_some_and(|&t| t > params.horizon)) {
            return Err(invalid(format!("edge {e} flips after the horizon")));
        }
        Ok(Self { graph, params, edges, init, seed })
    }

    pub fn graph(&self) -> &TorusGraph {
        &self.graph
    }

    pub fn params(&self) -> &DynParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    pub fn init(&self) -> &InitialCondition {
        &self.init
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn edges(&self) -> &[EdgeTrajectory] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &EdgeTrajectory {
        &self.edges[e]
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t < 0.0 || t > self.params.horizon || t.is_nan() {
            Err(Error::OutOfHorizon { t, horizon: self.params.horizon })
        } else {
            Ok(())
        }
    }

    fn check_interval(&self, a: f64, b: f64) -> Result<()> {
        if a > b {
            return Err(invalid(format!("empty interval [{a}, {b}]")));
        }
        self.check_time(a)?;
        self.check_time(b)
    }

    pub fn state_at(&self, edge: usize, t: f64) -> Result<bool> {
        self.check_time(t)?;
        if edge >= self.edges.len() {
            return Err(invalid(format!("edge {edge} out of range")));
        }
        Ok(self.edges[edge].state_at(t))
    }

    /// Unchecked query used on hot paths after the caller validated `t`.
    #[inline]
    pub(crate) fn is_open(&self, edge: usize, t: f64) -> bool {
        self.edges[edge].state_at(t)
    }

    pub fn states_at(&self, t: f64) -> Result<Vec<bool>> {
        self.check_time(t)?;
        Ok(self.edges.iter().map(|e| e.state_at(t)).collect())
    }

    pub fn open_throughout(&self, edge: usize, a: f64, b: f64) -> Result<bool> {
        self.check_interval(a, b)?;
        Ok(self.edges[edge].constant_on(a, b, true))
    }

    /// `#{e ∈ edges : e open on all of [a, b]}`.
    pub fn count_open_throughout(&self, edges: &[usize], a: f64, b: f64) -> Result<usize> {
        self.check_interval(a, b)?;
        Ok(edges.iter().filter(|&&e| self.edges[e].constant_on(a, b, true)).count())
    }

    /// Whether some vertex has all `2d` incident edges closed on `[0, len]`,
    /// with the smallest such vertex as witness.
    pub fn isolated_vertex_exists(&self, len: f64) -> Result<(bool, Option<usize>)> {
        self.check_interval(0.0, len)?;
        let g = &self.graph;
        let witness = (0..g.num_vertices()).find(|&v| (0..g.degree()).all(|dir| self.edges[g.step(v, dir).1].constant_on(0.0, len, false)));
        Ok((witness.is_some(), witness))
    }

    /// All flip instants in `(a, b]`, sorted by time then edge id.
    pub fn flip_events(&self, a: f64, b: f64) -> Vec<(f64, usize)> {
        let mut ev: Vec<(f64, usize)> = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(e, tr)| {
                let lo = tr.flips.partition_point(|&f| f <= a);
                let hi = tr.flips.partition_point(|&f| f <= b);
                tr.flips[lo..hi].iter().map(move |&t| (t, e))
            })
            .collect();
        ev.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        ev
    }

    pub fn total_flips(&self) -> usize {
        self.edges.iter().map(|e| e.flips.len()).sum()
    }
}

/// Samples an environment with the default (flip-based) scheme.
pub fn sample_env(g: &TorusGraph, params: DynParams, init: InitialCondition, seed: u64) -> Result<EnvTrajectory> {
    sample_env_with(g, params, init, seed, SamplingScheme::Flip)
}

pub fn sample_env_with(g: &TorusGraph, params: DynParams, init: InitialCondition, seed: u64, scheme: SamplingScheme) -> Result<EnvTrajectory> {
    if let InitialCondition::Explicit(bits) = &init {
        if bits.len() != g.num_edges() {
            return Err(invalid(format!("explicit initial condition has {} bits, torus has {} edges", bits.len(), g.num_edges())));
        }
    }
    let mut rng = rng_from_seed(seed);
    let edges = (0..g.num_edges())
        .map(|e| {
            let initial = match &init {
                InitialCondition::Stationary => rng.random::<f64>() < params.p,
                InitialCondition::AllClosed => false,
                InitialCondition::AllOpen => true,
                InitialCondition::Explicit(bits) => bits[e],
            };
            EdgeTrajectory::sample(&mut rng, &params, initial, scheme)
        })
        .collect();
    Ok(EnvTrajectory { graph: g.clone(), params, edges, init, seed })
}

/// Exact two-state law: `P(state `to` at time t | state `from` at 0)`.
pub fn edge_transition_prob(p: f64, mu: f64, t: f64, from: bool, to: bool) -> f64 {
    let decay = (-mu * t).exp();
    let open = if from { p + (1.0 - p) * decay } else { p * (1.0 - decay) };
    if to {
        open
    } else {
        1.0 - open
    }
}

/// `P(edge open throughout [a, b])` for a single edge started in `from`
/// (or from stationarity when `from` is `None`).
pub fn open_throughout_prob(p: f64, mu: f64, a: f64, b: f64, from: Option<bool>) -> f64 {
    let open_at_a = match from {
        None => p,
        Some(s) => edge_transition_prob(p, mu, a, s, true),
    };
    open_at_a * (-(1.0 - p) * mu * (b - a)).exp()
}

/// Per-edge probability of being open throughout `[a, b]` from the
/// all-closed start. For `[1/2, 1]` this is `(1−e^{−μ/2})·p·e^{−μ(1−p)/2}`.
pub fn worst_case_edge_prob(p: f64, mu: f64, a: f64, b: f64) -> f64 {
    open_throughout_prob(p, mu, a, b, Some(false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinomialLemmaReport {
    pub edges: usize,
    pub sigma: f64,
    /// Count threshold `|A|·σ·μ`.
    pub threshold: f64,
    pub trials: usize,
    pub successes: usize,
    pub empirical: f64,
    pub ci: Interval,
    pub per_edge_worst_case: f64,
    /// `P(Bin(|A|, q) ≥ |A|σμ)` with the worst-case per-edge probability.
    pub analytic_worst_case: f64,
    /// Whether the analytic probability is at least `σμ`.
    pub analytic_holds: bool,
}

fn count_threshold(edges: usize, sigma: f64, mu: f64) -> u64 {
    let raw = edges as f64 * sigma * mu;
    // tolerate representation error right at an integer
    (raw - 1e-12).ceil().max(0.0) as u64
}

/// Monte Carlo estimate of `P(#{e ∈ A open on [a,b]} ≥ |A|σμ)` together
/// with the analytic worst-case binomial tail.
#[allow(clippy::too_many_arguments)]
pub fn binomial_lemma_check(
    g: &TorusGraph,
    params: DynParams,
    edges: &[usize],
    sigma: f64,
    interval: (f64, f64),
    trials: usize,
    init: InitialCondition,
    seed: u64,
) -> Result<BinomialLemmaReport> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let (a, b) = interval;
    let params = params.with_horizon(params.horizon.max(b))?;
    let k = count_threshold(edges.len(), sigma, params.mu);
    let successes = (0..trials)
        .map(|i| {
            let env = sample_env(g, params, init.clone(), crate::rng::derive_seed(seed, crate::rng::Stream::Environment, i as u64))?;
            Ok((env.count_open_throughout(edges, a, b)? as u64 >= k) as usize)
        })
        .sum::<Result<usize>>()?;
    let q = worst_case_edge_prob(params.p, params.mu, a, b);
    let analytic = binomial_upper_tail(edges.len() as u64, q, k);
    Ok(BinomialLemmaReport {
        edges: edges.len(),
        sigma,
        threshold: edges.len() as f64 * sigma * params.mu,
        trials,
        successes,
        empirical: successes as f64 / trials as f64,
        ci: wilson(successes, trials, Z95),
        per_edge_worst_case: q,
        analytic_worst_case: analytic,
        analytic_holds: analytic >= sigma * params.mu,
    })
}

/// Largest candidate `σ` for which the worst-case binomial tail is at least
/// `σμ`, i.e. the inequality of the edge-counting bound holds for this
/// `(|A|, p, μ, [a,b])`.
pub fn largest_valid_sigma(edges: usize, p: f64, mu: f64, interval: (f64, f64), candidates: &[f64]) -> Option<f64> {
    let q = worst_case_edge_prob(p, mu, interval.0, interval.1);
    candidates
        .iter()
        .copied()
        .filter(|&s| s > 0.0 && binomial_upper_tail(edges as u64, q, count_threshold(edges, s, mu)) >= s * mu)
        .max_by(f64::total_cmp)
}

/// Edges open throughout `[a, b]` on the boundary of `s`, as a fraction of
/// the boundary (`0` for an empty boundary).
pub fn open_boundary_fraction(env: &EnvTrajectory, s: &VertexSet, a: f64, b: f64) -> Result<f64> {
    let boundary = env.graph().edge_boundary(s);
    if boundary.is_empty() {
        return Ok(0.0);
    }
    Ok(env.count_open_throughout(&boundary, a, b)? as f64 / boundary.len() as f64)
}
