//! Evolving sets for time-inhomogeneous chains sharing a stationary law:
//! the threshold step, its exact law and Doob transform, exact subset-law
//! propagation and the checks built on them.
//!
//! Subsets are bitmasks, so state spaces are limited to 63 states, and
//! exact propagation to [`EXACT_SET_LIMIT`].

mod random;

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::dist::{chi, Dist};
use crate::error::{invalid, Error, Result};
use crate::expansion::{expansion_phi, gamma_factor, profile_exact, CertifiedProfile};
use crate::kernel::Kernel;
use crate::rng::{derived_rng, Stream};
use crate::subset::Mask;

pub use random::{lazy, random_doubly_stochastic, random_inhom_chain, random_pi, random_reversible};

/// Largest state count for exact subset-law propagation.
pub const EXACT_SET_LIMIT: usize = 14;
/// Probabilities below this are dropped during propagation (and counted).
pub const PRUNE_BELOW: f64 = 1e-15;
const STATIONARITY_TOL: f64 = 1e-12;

/// A finite chain with kernels `K_1, K_2, …`, all with stationary `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct InhomChain {
    pi: Vec<f64>,
    kernels: Vec<Kernel>,
}

impl InhomChain {
    pub fn new(pi: Vec<f64>, kernels: Vec<Kernel>) -> Result<Self> {
        check_pi(&pi)?;
        for (i, k) in kernels.iter().enumerate() {
            check_kernel(k, &pi).map_err(|e| invalid(format!("kernel {}: {e}", i + 1)))?;
        }
        Ok(Self { pi, kernels })
    }

    pub fn size(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// `δ_x K_1 ⋯ K_k`.
    pub fn law(&self, x: usize, k: usize) -> Result<Vec<f64>> {
        if k > self.kernels.len() {
            return Err(invalid(format!("{k} steps requested, chain has {}", self.kernels.len())));
        }
        let mut v = vec![0.0; self.size()];
        v[x] = 1.0;
        for kernel in &self.kernels[..k] {
            v = kernel.apply_left(&v);
        }
        Ok(v)
    }

    /// Smallest diagonal entry over all kernels.
    pub fn min_diagonal(&self) -> f64 {
        self.kernels.iter().map(Kernel::min_diagonal).fold(1.0, f64::min)
    }
}

pub(crate) fn check_pi(pi: &[f64]) -> Result<()> {
    if pi.is_empty() || pi.len() > 63 {
        return Err(invalid(format!("state count {} outside 1..=63", pi.len())));
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(invalid("stationary law must have full support"));
    }
    if (pi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(invalid("stationary law must sum to 1"));
    }
    Ok(())
}

pub(crate) fn check_kernel(k: &Kernel, pi: &[f64]) -> Result<()> {
    if k.size() != pi.len() {
        return Err(invalid(format!("kernel has {} states, π has {}", k.size(), pi.len())));
    }
    let err = k.stationarity_error(pi);
    if err > STATIONARITY_TOL {
        return Err(invalid(format!("π is not stationary (error {err:e})")));
    }
    Ok(())
}

/// `S♯`: `S` itself if `π(S) ≤ 1/2`, else its complement.
pub fn sharp(s: Mask, pi: &[f64]) -> Mask {
    if s.mass(pi) <= 0.5 {
        s
    } else {
        s.complement(pi.len())
    }
}

/// `Z = sqrt(π(S♯)) / π(S)`; undefined at the empty set.
pub fn z_value(s: Mask, pi: &[f64]) -> Option<f64> {
    let mass = s.mass(pi);
    (mass > 0.0).then(|| sharp(s, pi).mass(pi).sqrt() / mass)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvoSetState {
    pub set: Mask,
    pub mass: f64,
    pub z: Option<f64>,
}

impl EvoSetState {
    pub fn new(set: Mask, pi: &[f64]) -> Self {
        Self { set, mass: set.mass(pi), z: z_value(set, pi) }
    }
}

/// `Q(S, y) / π(y)` for every `y`, snapped to `[0, 1]`.
pub fn threshold_ratios(s: Mask, k: &Kernel, pi: &[f64]) -> Vec<f64> {
    let m = pi.len();
    let mut q = vec![0.0; m];
    for x in s.iter() {
        let row = k.row(x);
        q.iter_mut().zip(row).for_each(|(acc, &kxy)| *acc += pi[x] * kxy);
    }
    q.iter()
        .zip(pi)
        .map(|(&qy, &py)| {
            let r = qy / py;
            if r > 1.0 - 1e-13 {
                1.0
            } else if r < 1e-13 {
                0.0
            } else {
                r
            }
        })
        .collect()
}

/// `{y : Q(S, y)/π(y) ≥ U}`. The empty set and the full set are absorbing.
pub fn evolve_step(s: Mask, k: &Kernel, pi: &[f64], u: f64) -> Mask {
    let full = Mask::full(pi.len());
    if s.is_empty() || s == full {
        return s;
    }
    let r = threshold_ratios(s, k, pi);
    Mask::from_indices((0..pi.len()).filter(|&y| r[y] >= u))
}

/// A finite law on subsets, kept sorted by bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLaw {
    entries: Vec<(Mask, f64)>,
}

impl SetLaw {
    pub fn point(s: Mask) -> Self {
        Self { entries: vec![(s, 1.0)] }
    }

    fn from_map(map: BTreeMap<u64, f64>) -> Self {
        Self { entries: map.into_iter().filter(|(_, p)| *p > 0.0).map(|(b, p)| (Mask(b), p)).collect() }
    }

    pub fn entries(&self) -> &[(Mask, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, s: Mask) -> f64 {
        self.entries.binary_search_by_key(&s.0, |(m, _)| m.0).map_or(0.0, |i| self.entries[i].1)
    }

    pub fn expect(&self, f: impl Fn(Mask) -> f64) -> f64 {
        self.entries.iter().map(|&(s, p)| p * f(s)).sum()
    }

    /// Image under `S ↦ Sᶜ`.
    pub fn complemented(&self, size: usize) -> SetLaw {
        let map: BTreeMap<u64, f64> = self.entries.iter().map(|&(s, p)| (s.complement(size).0, p)).collect();
        Self::from_map(map)
    }

    pub fn max_abs_diff(&self, other: &SetLaw) -> f64 {
        let mut keys: Vec<Mask> = self.entries.iter().chain(&other.entries).map(|e| e.0).collect();
        keys.sort_by_key(|m| m.0);
        keys.dedup();
        keys.into_iter().map(|s| (self.prob(s) - other.prob(s)).abs()).fold(0.0, f64::max)
    }
}

/// Exact law of `S̃` for a uniform `U`: with distinct ratios
/// `v_1 > v_2 > … > v_j`, `S̃ = {y : r_y ≥ v_i}` with probability
/// `v_i − v_{i+1}` (`v_{j+1} = 0`), and `S̃ = ∅` with probability `1 − v_1`.
pub fn step_law(s: Mask, k: &Kernel, pi: &[f64]) -> SetLaw {
    let full = Mask::full(pi.len());
    if s.is_empty() || s == full {
        return SetLaw::point(s);
    }
    let r = threshold_ratios(s, k, pi);
    let mut levels: Vec<f64> = r.clone();
    levels.sort_by(|a, b| b.total_cmp(a));
    let mut distinct: Vec<f64> = Vec::new();
    for v in levels {
        match distinct.last() {
            Some(&last) if last - v <= 1e-13 => {}
            _ => distinct.push(v),
        }
    }
    let mut map = BTreeMap::new();
    let top = distinct[0];
    if top < 1.0 {
        *map.entry(0).or_insert(0.0) += 1.0 - top;
    }
    for (i, &v) in distinct.iter().enumerate() {
        let next = distinct.get(i + 1).copied().unwrap_or(0.0);
        let set = Mask::from_indices((0..pi.len()).filter(|&y| r[y] >= v - 1e-13));
        *map.entry(set.0).or_insert(0.0) += v - next;
    }
    SetLaw::from_map(map)
}

/// Doob transform `P̂(S, S') = π(S')/π(S) · P(S, S')`. Its total mass is
/// the martingale identity, so it is returned unnormalised.
pub fn doob_step_law(s: Mask, k: &Kernel, pi: &[f64]) -> Result<SetLaw> {
    let mass = s.mass(pi);
    if s.is_empty() {
        return Err(invalid("Doob transform from the empty set"));
    }
    let base = step_law(s, k, pi);
    let map = base.entries.iter().map(|&(t, p)| (t.0, p * t.mass(pi) / mass)).collect();
    Ok(SetLaw::from_map(map))
}

/// `ψ(S) = 1 − E[sqrt(π(S̃)/π(S))]`.
pub fn expected_sqrt_ratio(s: Mask, k: &Kernel, pi: &[f64]) -> Result<f64> {
    let mass = s.mass(pi);
    if s.is_empty() {
        return Err(invalid("psi of the empty set"));
    }
    Ok((1.0 - step_law(s, k, pi).expect(|t| (t.mass(pi) / mass).sqrt())).clamp(0.0, 1.0))
}

/// `(ψ(S), (γ²/(2(1−γ)²))·φ(S)²)` with `γ` the kernel's smallest diagonal
/// entry (clamped at 1/2); the right side is 0 when `γ = 0`.
pub fn psi_phi_pair(s: Mask, k: &Kernel, pi: &[f64]) -> Result<(f64, f64)> {
    let psi = expected_sqrt_ratio(s, k, pi)?;
    let gamma = k.min_diagonal();
    let rhs = if gamma > 0.0 { expansion_phi(k, pi, &s)?.powi(2) / gamma_factor(gamma)? } else { 0.0 };
    Ok((psi, rhs))
}

/// Ordinary run driven by i.i.d. uniforms.
pub fn run_evoset(chain: &InhomChain, s0: Mask, steps: usize, seed: u64) -> Result<Vec<EvoSetState>> {
    if steps > chain.len() {
        return Err(invalid(format!("{steps} steps requested, chain has {}", chain.len())));
    }
    let pi = chain.pi();
    let mut rng = derived_rng(seed, Stream::EvolvingSet, 0);
    let mut s = s0;
    let mut out = vec![EvoSetState::new(s, pi)];
    for k in &chain.kernels[..steps] {
        let u: f64 = rng.random();
        s = evolve_step(s, k, pi, u);
        out.push(EvoSetState::new(s, pi));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoobStep {
    pub state: EvoSetState,
    /// Likelihood ratio of the ordinary to the Doob path law: `π(S_0)/π(S_k)`.
    pub weight: f64,
}

/// Run of the Doob-transformed process; never reaches the empty set.
pub fn doob_run(chain: &InhomChain, s0: Mask, steps: usize, seed: u64) -> Result<Vec<DoobStep>> {
    if steps > chain.len() {
        return Err(invalid(format!("{steps} steps requested, chain has {}", chain.len())));
    }
    let pi = chain.pi();
    let m0 = s0.mass(pi);
    let mut rng = derived_rng(seed, Stream::EvolvingSet, 1);
    let mut s = s0;
    let mut out = vec![DoobStep { state: EvoSetState::new(s, pi), weight: 1.0 }];
    for k in &chain.kernels[..steps] {
        let law = doob_step_law(s, k, pi)?;
        let u: f64 = rng.random::<f64>() * law.total();
        let mut acc = 0.0;
        s = law.entries.last().map(|e| e.0).unwrap_or(s);
        for &(t, p) in &law.entries {
            acc += p;
            if u < acc {
                s = t;
                break;
            }
        }
        out.push(DoobStep { state: EvoSetState::new(s, pi), weight: m0 / s.mass(pi) });
    }
    Ok(out)
}

/// Exact propagation of a subset law through one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub law: SetLaw,
    /// Total probability dropped by pruning so far.
    pub pruned: f64,
}

impl Propagation {
    pub fn start(s: Mask) -> Self {
        Self { law: SetLaw::point(s), pruned: 0.0 }
    }

    pub fn step(&self, k: &Kernel, pi: &[f64], doob: bool) -> Result<Self> {
        let mut map: BTreeMap<u64, f64> = BTreeMap::new();
        for &(s, p) in &self.law.entries {
            let next = if doob { doob_step_law(s, k, pi)? } else { step_law(s, k, pi) };
            for &(t, q) in &next.entries {
                *map.entry(t.0).or_insert(0.0) += p * q;
            }
        }
        let mut pruned = self.pruned;
        map.retain(|_, p| {
            let keep = *p >= PRUNE_BELOW;
            if !keep {
                pruned += *p;
            }
            keep
        });
        Ok(Self { law: SetLaw::from_map(map), pruned })
    }
}

fn check_exact_size(m: usize) -> Result<()> {
    if m > EXACT_SET_LIMIT {
        Err(Error::Capability { what: "exact subset-law propagation", needed: m, budget: EXACT_SET_LIMIT })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalReport {
    pub max_error: f64,
    pub pruned: f64,
}

/// Compares `π(y)/π(x)·P(y ∈ S_k | S_0 = {x})` with `P_x(X_k = y)`.
pub fn marginal_identity_check(chain: &InhomChain, x: usize, k: usize) -> Result<MarginalReport> {
    let m = chain.size();
    check_exact_size(m)?;
    let pi = chain.pi();
    let law = chain.law(x, k)?;
    let mut prop = Propagation::start(Mask::singleton(x));
    for kernel in &chain.kernels[..k] {
        prop = prop.step(kernel, pi, false)?;
    }
    let max_error = (0..m)
        .map(|y| {
            let hit = prop.law.expect(|s| if s.0 >> y & 1 == 1 { 1.0 } else { 0.0 });
            (pi[y] / pi[x] * hit - law[y]).abs()
        })
        .fold(0.0, f64::max);
    Ok(MarginalReport { max_error, pruned: prop.pruned })
}

/// Exact ψ-profile `r ↦ min_i min{ψ_{K_i}(S) : π(S) ≤ r}` over the given kernels.
pub fn psi_profile(kernels: &[&Kernel], pi: &[f64]) -> Result<CertifiedProfile> {
    profile_exact(pi, |s| kernels.iter().try_fold(f64::INFINITY, |acc, k| Ok(acc.min(expected_sqrt_ratio(s, k, pi)?))))
}

/// Smallest integer `n ≥ ∫_{4π(x)}^{4/ε} du/(u ψ(u))`.
pub fn psi_step_count(profile: &CertifiedProfile, pi_x: f64, eps: f64) -> Result<u64> {
    let integral = profile.profile().integral(4.0 * pi_x, 4.0 / eps, 1)?;
    Ok(integral.ceil().max(0.0) as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoobZReport {
    /// `Ê[Z_j]` for `j = 0..=steps`.
    pub expected_z: Vec<f64>,
    /// `χ(P_x(X_j ∈ ·), π)` for `j = 0..=steps`.
    pub chi: Vec<f64>,
    pub chi_ok: bool,
    /// Worst `Ê[Z_{j+1} | S_j] − Z_j(1 − f_0(Z_j))` over steps and states.
    pub supermartingale_excess: f64,
    /// `None` when the ψ-profile has a zero.
    pub psi_steps: Option<u64>,
    pub sqrt_eps: f64,
    /// `Ê[Z_n]` at the ψ step count, when the chain is that long.
    pub z_at_psi_steps: Option<f64>,
    pub z_ok: bool,
    pub pruned: f64,
}

/// Exact Doob propagation from `{x}` for `steps` steps (at least the ψ step
/// count when the chain allows), checking `χ ≤ Ê[Z]`, the per-step
/// contraction and, at the ψ step count, `Ê[Z] ≤ √ε`.
pub fn doob_z_bound_check(chain: &InhomChain, x: usize, steps: usize, eps: f64) -> Result<DoobZReport> {
    let m = chain.size();
    check_exact_size(m)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps must lie in (0, 1)"));
    }
    let pi = chain.pi();
    let refs: Vec<&Kernel> = chain.kernels.iter().collect();
    let profile = psi_profile(&refs, pi)?;
    // a zero in the ψ-profile leaves the step count undefined; the other
    // checks still apply
    let psi_steps = match psi_step_count(&profile, pi[x], eps) {
        Ok(n) => Some(n),
        Err(Error::DivergentIntegral(_)) => None,
        Err(e) => return Err(e),
    };
    let horizon = steps.max(psi_steps.unwrap_or(0) as usize).min(chain.len());
    if horizon < steps {
        return Err(invalid(format!("{steps} steps requested, chain has {}", chain.len())));
    }
    let target = Dist::from_vec_unchecked(pi.to_vec());
    // f_0(Z) = ψ(1/Z²) = ψ(min(π(S), 1/2)); evaluated from the mass to
    // avoid rounding 1/Z² below a knot
    let f0 = |s: Mask| profile.profile().eval(s.mass(pi).min(0.5));
    let z_of = |s: Mask| z_value(s, pi).expect("Doob law never charges the empty set");
    let mut prop = Propagation::start(Mask::singleton(x));
    let mut expected_z = Vec::with_capacity(horizon + 1);
    let mut chis = Vec::with_capacity(horizon + 1);
    let mut excess = f64::NEG_INFINITY;
    let mut law = vec![0.0; m];
    law[x] = 1.0;
    for j in 0..=horizon {
        expected_z.push(prop.law.expect(z_of) / prop.law.total());
        chis.push(chi(&Dist::from_vec_unchecked(law.clone()), &target)?);
        if j == horizon {
            break;
        }
        let k = &chain.kernels[j];
        for &(s, _) in prop.law.entries() {
            let z = z_of(s);
            let next = doob_step_law(s, k, pi)?.expect(z_of);
            excess = excess.max(next - z * (1.0 - f0(s)));
        }
        prop = prop.step(k, pi, true)?;
        law = k.apply_left(&law);
    }
    let slack = 1e-9;
    let chi_ok = chis.iter().zip(&expected_z).all(|(c, z)| *c <= z + slack);
    let z_at = psi_steps.filter(|&n| n as usize <= horizon).map(|n| expected_z[n as usize]);
    let sqrt_eps = eps.sqrt();
    Ok(DoobZReport {
        chi_ok,
        supermartingale_excess: excess,
        psi_steps,
        sqrt_eps,
        z_ok: z_at.is_none_or(|z| z <= sqrt_eps + slack),
        z_at_psi_steps: z_at,
        pruned: prop.pruned,
        expected_z: expected_z.into_iter().take(steps + 1).collect(),
        chi: chis.into_iter().take(steps + 1).collect(),
    })
}

#[cfg(test)]
mod tests;
