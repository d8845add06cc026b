//! Conductance quantities: Q-flows, set expansion, environment-averaged
//! expansion, expansion profiles and the integral mixing bound.
//!
//! Profiles come in two types. A [`CertifiedProfile`] is a lower bound on
//! the true profile (exact enumeration, or the analytic torus bound on a
//! dyadic lower grid) and is the only kind the bound functions accept. A
//! [`DiagnosticProfile`] comes from a restricted family of sets, so it is
//! an upper envelope and is for inspection only.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynenv::{open_boundary_fraction, sample_env, DynParams, EnvTrajectory, InitialCondition};
use crate::error::{invalid, Error, Result};
use crate::kernel::Kernel;
use crate::rng::{derive_seed, derived_rng, Stream};
use crate::stats::{mean_estimate, MeanEstimate};
use crate::subset::{Mask, Membership};
use crate::torus::{TorusGraph, VertexSet, ISO_ENUMERATION_LIMIT};
use crate::walk::{window_kernel_with, ExactBudget, Laziness};

/// `Q(A, B) = Σ_{x∈A, y∈B} π(x) K(x, y)`.
pub fn q_flow<A: Membership + ?Sized, B: Membership + ?Sized>(k: &Kernel, pi: &[f64], a: &A, b: &B) -> f64 {
    let m = k.size();
    let mut total = 0.0;
    for x in (0..m).filter(|&x| a.contains(x)) {
        let row = k.row(x);
        total += pi[x] * (0..m).filter(|&y| b.contains(y)).map(|y| row[y]).sum::<f64>();
    }
    total
}

struct Not<'a, S: ?Sized>(&'a S);

impl<S: Membership + ?Sized> Membership for Not<'_, S> {
    fn contains(&self, i: usize) -> bool {
        !self.0.contains(i)
    }
}

fn set_mass<S: Membership + ?Sized>(pi: &[f64], s: &S) -> f64 {
    pi.iter().enumerate().filter(|(i, _)| s.contains(*i)).map(|(_, p)| p).sum()
}

/// `φ(S) = Q(S, Sᶜ) / π(S)`.
pub fn expansion_phi<S: Membership + ?Sized>(k: &Kernel, pi: &[f64], s: &S) -> Result<f64> {
    let mass = set_mass(pi, s);
    if mass <= 0.0 {
        return Err(invalid("expansion of an empty set"));
    }
    Ok((q_flow(k, pi, s, &Not(s)) / mass).clamp(0.0, 1.0))
}

/// Second route to `φ(S)`: `1 − Q(S, S)/π(S)`, i.e. one minus the
/// stationary probability of staying in `S` given a start in `S`.
pub fn expansion_phi_by_retention<S: Membership + ?Sized>(k: &Kernel, pi: &[f64], s: &S) -> Result<f64> {
    let mass = set_mass(pi, s);
    if mass <= 0.0 {
        return Err(invalid("expansion of an empty set"));
    }
    Ok(1.0 - q_flow(k, pi, s, s) / mass)
}

/// `φ(ζ, S) = Σ_η w(η) φ_{K_η}(S)` for an exactly known next-environment law.
pub fn phi_env_exact<S: Membership + ?Sized>(law: &[(f64, &Kernel)], pi: &[f64], s: &S) -> Result<f64> {
    let mut total = 0.0;
    for &(w, k) in law {
        if w > 0.0 {
            total += w * expansion_phi(k, pi, s)?;
        }
    }
    Ok(total)
}

/// Monte Carlo `E[φ_{η_{[0,1]}}(S)]` for the unit torus window started from
/// the edge configuration `eta0`.
pub fn phi_env_torus(g: &TorusGraph, p: f64, mu: f64, eta0: &[bool], s: &VertexSet, samples: usize, seed: u64) -> Result<MeanEstimate> {
    if samples < 1000 {
        log::warn!("phi_env_torus with {samples} < 1000 samples");
    }
    let params = DynParams::new(p, mu, 1.0)?;
    let pi = vec![1.0 / g.num_vertices() as f64; g.num_vertices()];
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let env = sample_env(g, params, InitialCondition::Explicit(eta0.to_vec()), derive_seed(seed, Stream::Environment, i as u64))?;
            let k = window_kernel_with(&env, 0.0, 1.0, Laziness::Plain, ExactBudget::default())?;
            expansion_phi(&k.kernel, &pi, s)
        })
        .collect::<Result<_>>()?;
    Ok(mean_estimate(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ExactEnumerated,
    FamilyRestricted,
    AnalyticTorusBound,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::ExactEnumerated => "exact-enumerated",
            Provenance::FamilyRestricted => "family-restricted",
            Provenance::AnalyticTorusBound => "analytic-torus-bound",
        }
    }
}

/// A nonincreasing step function: `value[i]` on `[knot[i], knot[i+1])`,
/// and the last value on `[knot[last], ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProfile {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepProfile {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(invalid("profile needs matching, nonempty knots and values"));
        }
        if !(knots[0] > 0.0) || knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("profile knots must be positive and strictly increasing"));
        }
        if values.iter().any(|v| !(*v >= 0.0)) || values.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("profile values must be nonnegative and nonincreasing"));
        }
        Ok(Self { knots, values })
    }

    /// Lower step envelope of `(mass, value)` observations: at each mass,
    /// the minimum over all observations with mass at most it.
    pub fn from_observations(mut obs: Vec<(f64, f64)>) -> Result<Self> {
        obs.retain(|(m, _)| *m > 0.0);
        if obs.is_empty() {
            return Err(invalid("no sets with positive mass"));
        }
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut knots: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut running = f64::INFINITY;
        for (m, v) in obs {
            running = running.min(v);
            match knots.last() {
                Some(&k) if m - k <= 1e-12 * k.max(1.0) => *values.last_mut().unwrap() = running,
                _ => {
                    knots.push(m);
                    values.push(running);
                }
            }
        }
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest mass on which the profile is defined.
    pub fn pi_star(&self) -> f64 {
        self.knots[0]
    }

    pub fn eval(&self, r: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= r);
        self.values[i.saturating_sub(1)]
    }

    /// `∫_lo^hi du / (u φ(u)^power)`, exactly, one log term per step.
    pub fn integral(&self, lo: f64, hi: f64, power: i32) -> Result<f64> {
        if !(lo > 0.0) || !(hi >= lo) {
            return Err(invalid(format!("bad integration range [{lo}, {hi}]")));
        }
        if lo < self.knots[0] * (1.0 - 1e-12) {
            return Err(invalid(format!("integration starts at {lo}, below the profile domain {}", self.knots[0])));
        }
        let mut total = 0.0;
        for i in 0..self.knots.len() {
            let a = self.knots[i].max(lo);
            let b = self.knots.get(i + 1).copied().unwrap_or(f64::INFINITY).min(hi);
            if b <= a {
                continue;
            }
            let v = self.values[i];
            if v <= 0.0 {
                return Err(Error::DivergentIntegral(a));
            }
            total += (b / a).ln() / v.powi(power);
        }
        Ok(total)
    }

    pub fn to_text(&self) -> String {
        self.knots.iter().zip(&self.values).map(|(k, v)| format!("{k} {v}\n")).collect()
    }
}

/// A profile that lower-bounds the true expansion profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedProfile {
    profile: StepProfile,
    provenance: Provenance,
}

impl CertifiedProfile {
    pub fn profile(&self) -> &StepProfile {
        &self.profile
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// An upper envelope from a restricted family of sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticProfile {
    profile: StepProfile,
    family: String,
}

impl DiagnosticProfile {
    pub fn profile(&self) -> &StepProfile {
        &self.profile
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::FamilyRestricted
    }
}

/// Exact profile `r ↦ min{φ(S) : 0 < π(S) ≤ r}` over all subsets with
/// `π(S) ≤ 1/2`, for any set functional `phi`.
pub fn profile_exact<F>(pi: &[f64], phi: F) -> Result<CertifiedProfile>
where
    F: Fn(Mask) -> Result<f64> + Sync,
{
    let m = pi.len();
    if m > ISO_ENUMERATION_LIMIT {
        return Err(Error::Capability { what: "exact profile enumeration", needed: m, budget: ISO_ENUMERATION_LIMIT });
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(invalid("stationary law must have full support"));
    }
    let obs: Vec<(f64, f64)> = (1u64..(1u64 << m))
        .into_par_iter()
        .filter_map(|bits| {
            let s = Mask(bits);
            let mass = s.mass(pi);
            (mass <= 0.5 + 1e-12).then(|| phi(s).map(|v| (mass, v)))
        })
        .collect::<Result<_>>()?;
    Ok(CertifiedProfile { profile: StepProfile::from_observations(obs)?, provenance: Provenance::ExactEnumerated })
}

/// Exact profile of a single kernel.
pub fn kernel_profile(k: &Kernel, pi: &[f64]) -> Result<CertifiedProfile> {
    profile_exact(pi, |s| expansion_phi(k, pi, &s))
}

/// Profile restricted to a family of candidate sets.
pub fn family_profile<S: Membership + Sync>(k: &Kernel, pi: &[f64], family: &[S], name: &str) -> Result<DiagnosticProfile> {
    let obs: Vec<(f64, f64)> = family
        .par_iter()
        .filter_map(|s| {
            let mass = set_mass(pi, s);
            (mass > 0.0 && mass <= 0.5 + 1e-12).then(|| expansion_phi(k, pi, s).map(|v| (mass, v)))
        })
        .collect::<Result<_>>()?;
    Ok(DiagnosticProfile { profile: StepProfile::from_observations(obs)?, family: name.to_string() })
}

/// Candidate family: every singleton.
pub fn singletons(g: &TorusGraph) -> Vec<VertexSet> {
    (0..g.num_vertices()).map(|v| VertexSet::from_indices(g.num_vertices(), [v])).collect()
}

/// Candidate family: coordinate boxes `[0, l_1) × … × [0, l_d)` anchored at
/// the origin, with volume at most half the torus.
pub fn coordinate_boxes(g: &TorusGraph) -> Vec<VertexSet> {
    let (d, n) = (g.dim(), g.side());
    let mut out = Vec::new();
    let mut lens = vec![1usize; d];
    loop {
        let vol: usize = lens.iter().product();
        if 2 * vol <= g.num_vertices() {
            let members = (0..g.num_vertices()).filter(|&v| g.coords(v).iter().zip(&lens).all(|(c, l)| c < l));
            out.push(VertexSet::from_indices(g.num_vertices(), members));
        }
        let mut i = 0;
        while i < d {
            lens[i] += 1;
            if lens[i] <= n {
                break;
            }
            lens[i] = 1;
            i += 1;
        }
        if i == d {
            return out;
        }
    }
}

/// Candidate family: `count` uniformly random subsets of each size up to half.
pub fn random_sets(g: &TorusGraph, count: usize, seed: u64) -> Vec<VertexSet> {
    let m = g.num_vertices();
    let mut rng = derived_rng(seed, Stream::Instance, 0);
    let mut out = Vec::new();
    for size in 1..=m / 2 {
        for _ in 0..count {
            let picked = rand::seq::index::sample(&mut rng, m, size);
            out.push(VertexSet::from_indices(m, picked.iter()));
        }
    }
    out
}

/// Certified lower step version of the torus profile
/// `r ↦ c μ² / (n r^{1/d})`, held constant for `r ≥ 1/2`. Knots are at
/// `π★·2^j` (and `1/2`), and each step takes the value at its right end.
pub fn analytic_torus_profile(c: f64, mu: f64, n: usize, d: usize) -> Result<CertifiedProfile> {
    if !(c > 0.0 && mu > 0.0) {
        return Err(invalid("analytic profile needs c > 0 and mu > 0"));
    }
    let f = |r: f64| c * mu * mu / (n as f64 * r.powf(1.0 / d as f64));
    let pi_star = (n as f64).powi(-(d as i32));
    let mut knots = vec![pi_star];
    while *knots.last().unwrap() < 0.5 {
        knots.push((knots.last().unwrap() * 2.0).min(0.5));
    }
    let values: Vec<f64> = (0..knots.len()).map(|i| f(*knots.get(i + 1).unwrap_or(&0.5))).collect();
    Ok(CertifiedProfile { profile: StepProfile::new(knots, values)?, provenance: Provenance::AnalyticTorusBound })
}

/// `∫_{4/n^d}^{4/ε} du / (u φ(u)²)` for the exact analytic torus profile
/// `φ(u) = c μ² / (n u^{1/d})` (constant above 1/2), in closed form.
pub fn analytic_torus_integral(c: f64, mu: f64, n: usize, d: usize, eps: f64) -> Result<f64> {
    let nd = (n as f64).powi(d as i32);
    if nd < 8.0 {
        return Err(invalid("closed form needs n^d ≥ 8 so that 4/n^d ≤ 1/2"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps must lie in (0, 1)"));
    }
    let q = 2.0 / d as f64;
    let scale = (n as f64 / (mu * mu)).powi(2) / (c * c);
    Ok(scale * ((d as f64 / 2.0) * (0.5f64.powf(q) - 4f64.powf(q) / (n as f64).powi(2)) + 0.5f64.powf(q) * (8.0 / eps).ln()))
}

/// Prefactor `2(1−γ)²/γ²`, with `γ` clamped to at most 1/2.
pub fn gamma_factor(gamma: f64) -> Result<f64> {
    // a diagonal of 1 can round to just above 1
    if !(gamma > 0.0 && gamma <= 1.0 + 1e-12) {
        return Err(Error::TheoremInapplicable(format!("min diagonal {gamma} is not in (0, 1]")));
    }
    let g = gamma.min(0.5);
    Ok(2.0 * (1.0 - g).powi(2) / (g * g))
}

/// Step count `n = 1 + ⌈(2(1−γ)²/γ²) ∫_{4π_x}^{4/ε} du/(u φ(u)²)⌉`.
pub fn integral_mixing_bound(profile: &CertifiedProfile, gamma: f64, pi_x: f64, eps: f64) -> Result<u64> {
    if !(pi_x > 0.0 && pi_x <= 1.0) {
        return Err(invalid(format!("pi_x = {pi_x} not in (0, 1]")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps = {eps} not in (0, 1)")));
    }
    let integral = profile.profile.integral(4.0 * pi_x, 4.0 / eps, 2)?;
    let steps = (gamma_factor(gamma)? * integral).ceil();
    Ok(1 + steps as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPhiCheck {
    pub beta: f64,
    pub phi: f64,
    /// `c β / (n π(S)^{1/d})`.
    pub rhs: f64,
    /// `φ / (β / (n π(S)^{1/d}))`, infinite when `β = 0`.
    pub ratio: f64,
    pub pass: bool,
    pub exact: bool,
    /// Half-width of the 95% interval for `φ` in Monte Carlo mode.
    pub phi_half_width: f64,
}

/// Witness constant `γ(d)·c'_d/(2d)` with `γ(d) = e^{-1/2}/(4d)`: one
/// attempted jump in the second half of the unit window, along a given edge.
pub fn lemma_witness_constant(d: usize, iso_constant: f64) -> f64 {
    let gamma_d = (-0.5f64).exp() / (4.0 * d as f64);
    gamma_d * iso_constant / (2.0 * d as f64)
}

/// Checks `φ_{η_{[a,a+1]}}(S) ≥ c β / (n π(S)^{1/d})` where `β` is the
/// fraction of boundary edges open throughout `[a+1/2, a+1]`. Falls back to
/// `mc_replicas` walks when the exact kernel is over budget.
pub fn torus_phi_lower_bound_check(
    env: &EnvTrajectory,
    s: &VertexSet,
    a: f64,
    c: f64,
    budget: ExactBudget,
    mc_replicas: usize,
    seed: u64,
) -> Result<TorusPhiCheck> {
    let g = env.graph();
    let m = g.num_vertices();
    let mass = s.uniform_mass();
    if s.is_empty() || mass > 0.5 + 1e-12 {
        return Err(invalid("need a nonempty set with at most half the mass"));
    }
    let beta = open_boundary_fraction(env, s, a + 0.5, a + 1.0)?;
    let scale = g.side() as f64 * mass.powf(1.0 / g.dim() as f64);
    let (phi, exact, hw) = if m <= budget.0 {
        let k = window_kernel_with(env, a, a + 1.0, Laziness::Plain, budget)?;
        let pi = vec![1.0 / m as f64; m];
        (expansion_phi(&k.kernel, &pi, s)?, true, 0.0)
    } else {
        let est = escape_fraction_mc(env, s, a, mc_replicas, seed)?;
        (est.mean, false, crate::stats::Z95 * est.std_err)
    };
    let rhs = c * beta / scale;
    Ok(TorusPhiCheck {
        beta,
        phi,
        rhs,
        ratio: if beta > 0.0 { phi * scale / beta } else { f64::INFINITY },
        pass: phi + hw >= rhs - 1e-12,
        exact,
        phi_half_width: hw,
    })
}

/// Fraction of walks started uniformly in `S` at time `a` that are outside
/// `S` at `a + 1`.
fn escape_fraction_mc(env: &EnvTrajectory, s: &VertexSet, a: f64, replicas: usize, seed: u64) -> Result<MeanEstimate> {
    env.check_time(a + 1.0)?;
    if replicas == 0 {
        return Err(invalid("Monte Carlo fallback needs replicas > 0"));
    }
    let members: Vec<usize> = s.iter().collect();
    let g = env.graph();
    let outcomes: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = derived_rng(seed, Stream::Walk, r as u64);
            let mut x = members[rng.random_range(0..members.len())];
            let mut t = a;
            loop {
                let gap: f64 = Exp1.sample(&mut rng);
                t += gap;
                if t > a + 1.0 {
                    break;
                }
                let (y, e) = g.step(x, rng.random_range(0..g.degree()));
                if env.is_open(e, t) {
                    x = y;
                }
            }
            if s.contains(x) {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    Ok(mean_estimate(&outcomes))
}

#[cfg(test)]
mod tests;
