//! Finite Markovian environments `(E, R)` carrying walk kernels `p_ζ` with a
//! shared stationary law, the annealed product chain, the lazy-coupled
//! variant, and an exact check of the integral mixing bound's tail
//! statement over environment paths.

mod format;

use rand::Rng as _;
use rayon::prelude::*;

use crate::dist::{chi, tv, Dist, Method};
use crate::error::{invalid, Error, Result};
use crate::evoset::{check_kernel, check_pi, InhomChain};
use crate::expansion::{expansion_phi, integral_mixing_bound, profile_exact, CertifiedProfile};
use crate::kernel::Kernel;
use crate::rng::{derive_seed, rng_from_seed, Stream};
use crate::stats::{binomial_half_pmf, wilson, Interval, Z95};
use crate::walk::WalkKernel;

pub use format::{read_chain, write_chain, CHAIN_FORMAT_VERSION};

/// Environment transition matrix `R` on `E`, and a walk kernel per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteEnvChain {
    r: Kernel,
    kernels: Vec<Kernel>,
    pi: Vec<f64>,
}

impl FiniteEnvChain {
    pub fn new(r: Kernel, kernels: Vec<Kernel>, pi: Vec<f64>) -> Result<Self> {
        if r.size() != kernels.len() || kernels.is_empty() {
            return Err(invalid(format!("R has {} states but {} kernels were given", r.size(), kernels.len())));
        }
        check_pi(&pi)?;
        for (z, k) in kernels.iter().enumerate() {
            check_kernel(k, &pi).map_err(|e| invalid(format!("kernel of environment {z}: {e}")))?;
        }
        Ok(Self { r, kernels, pi })
    }

    pub fn num_envs(&self) -> usize {
        self.kernels.len()
    }

    pub fn size(&self) -> usize {
        self.pi.len()
    }

    pub fn r(&self) -> &Kernel {
        &self.r
    }

    pub fn kernel(&self, zeta: usize) -> &Kernel {
        &self.kernels[zeta]
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `γ = min_{ζ, x} p_ζ(x, x)`.
    pub fn gamma(&self) -> f64 {
        self.kernels.iter().map(Kernel::min_diagonal).fold(1.0, f64::min)
    }

    /// The inhomogeneous chain seen along a fixed environment path.
    pub fn along(&self, path: &[usize]) -> Result<InhomChain> {
        InhomChain::new(self.pi.clone(), path.iter().map(|&z| self.kernels[z].clone()).collect())
    }
}

/// `Q((ζ,x),(ζ',x')) = R(ζ,ζ') p_{ζ'}(x,x')` on `E × S`, indexed `ζ·|S| + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealedChain {
    pub envs: usize,
    pub states: usize,
    pub q: Kernel,
}

impl AnnealedChain {
    pub fn index(&self, zeta: usize, x: usize) -> usize {
        zeta * self.states + x
    }

    /// Law of `(ζ_k, X_k)` from `(ζ_0, x_0)`.
    pub fn joint_law(&self, zeta0: usize, x0: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.q.size()];
        v[self.index(zeta0, x0)] = 1.0;
        for _ in 0..k {
            v = self.q.apply_left(&v);
        }
        v
    }

    /// Law of `X_k` alone.
    pub fn walk_marginal(&self, zeta0: usize, x0: usize, k: usize) -> Dist {
        let joint = self.joint_law(zeta0, x0, k);
        let mut out = vec![0.0; self.states];
        for z in 0..self.envs {
            out.iter_mut().zip(&joint[z * self.states..(z + 1) * self.states]).for_each(|(o, j)| *o += j);
        }
        Dist::from_vec_unchecked(out)
    }
}

pub fn annealed_kernel(chain: &FiniteEnvChain) -> Result<AnnealedChain> {
    let (e, m) = (chain.num_envs(), chain.size());
    let mut data = vec![0.0; e * m * e * m];
    for z in 0..e {
        for x in 0..m {
            let row = (z * m + x) * e * m;
            for z2 in 0..e {
                let w = chain.r.get(z, z2);
                for x2 in 0..m {
                    data[row + z2 * m + x2] = w * chain.kernels[z2].get(x, x2);
                }
            }
        }
    }
    Ok(AnnealedChain { envs: e, states: m, q: Kernel::from_raw(e * m, data)? })
}

fn off_support(chain: &FiniteEnvChain, zeta0: Option<usize>, path: &[usize]) -> bool {
    zeta0.into_iter().chain(path.iter().copied()).collect::<Vec<_>>().windows(2).any(|w| chain.r.get(w[0], w[1]) <= 0.0)
}

/// `δ_{x0} p_{ζ_1} ⋯ p_{ζ_k}`. Paths outside the support of `R` are
/// allowed, with a warning.
pub fn quenched_law(chain: &FiniteEnvChain, path: &[usize], x0: usize) -> Result<Dist> {
    if x0 >= chain.size() {
        return Err(invalid(format!("start state {x0} out of range")));
    }
    if let Some(&z) = path.iter().find(|&&z| z >= chain.num_envs()) {
        return Err(invalid(format!("environment {z} out of range")));
    }
    if off_support(chain, None, path) {
        log::warn!("environment path {path:?} has zero probability under R");
    }
    let mut v = vec![0.0; chain.size()];
    v[x0] = 1.0;
    for &z in path {
        v = chain.kernels[z].apply_left(&v);
    }
    Ok(Dist::from_vec_unchecked(v))
}

/// Two walk states; environments are the identity and the swap, and `R`
/// picks either with probability 1/2.
pub fn counterexample_chain() -> FiniteEnvChain {
    let r = Kernel::new(2, vec![0.5; 4]).expect("valid");
    let id = Kernel::identity(2);
    let swap = Kernel::new(2, vec![0.0, 1.0, 1.0, 0.0]).expect("valid");
    FiniteEnvChain::new(r, vec![id, swap], vec![0.5, 0.5]).expect("valid")
}

/// The lazy-coupled variant: each step, with probability 1/2 the walker and
/// the environment both stay; otherwise the environment moves by `R` and
/// the walker by the new environment's kernel. Given the sequence of
/// environments actually visited, the walker's law after `n` steps is
/// `Σ_j Bin(n, 1/2)(j) · δ_x p_{ζ_1} ⋯ p_{ζ_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantChain {
    base: FiniteEnvChain,
    effective: Vec<Kernel>,
}

pub fn variant_chain(chain: &FiniteEnvChain) -> VariantChain {
    VariantChain { base: chain.clone(), effective: chain.kernels.iter().map(Kernel::half_lazy).collect() }
}

impl VariantChain {
    pub fn base(&self) -> &FiniteEnvChain {
        &self.base
    }

    /// `(p_ζ + I)/2`.
    pub fn effective_kernel(&self, zeta: usize) -> &Kernel {
        &self.effective[zeta]
    }

    /// `R(ζ, ℓ, η)`: `1(ζ = η)` after a lazy step (`ℓ = 0`), `R(ζ, η)` after a move.
    pub fn augmented_r(&self, zeta: usize, moved: bool, eta: usize) -> f64 {
        if moved {
            self.base.r.get(zeta, eta)
        } else if zeta == eta {
            1.0
        } else {
            0.0
        }
    }

    /// `γ' = (1 + γ)/2`.
    pub fn gamma(&self) -> f64 {
        (1.0 + self.base.gamma()) / 2.0
    }

    /// Walker law after `n` steps given the visited environments `path`
    /// (`path.len() ≥ n`).
    pub fn quenched_law(&self, path: &[usize], x0: usize, n: usize) -> Result<Dist> {
        if path.len() < n {
            return Err(invalid(format!("{n} steps need an environment path of length {n}")));
        }
        let m = self.base.size();
        let mut cur = vec![0.0; m];
        cur[x0] = 1.0;
        let mut out: Vec<f64> = cur.iter().map(|c| c * binomial_half_pmf(n, 0)).collect();
        for (j, &z) in path.iter().take(n).enumerate() {
            cur = self.base.kernels[z].apply_left(&cur);
            let w = binomial_half_pmf(n, j + 1);
            out.iter_mut().zip(&cur).for_each(|(o, c)| *o += w * c);
        }
        Ok(Dist::from_vec_unchecked(out))
    }
}

/// Which walker dynamics a check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    Plain,
    LazyCoupled,
}

/// Exact profile `r ↦ min_ζ min_{π(S) ≤ r} Σ_η R(ζ,η) φ_{p_η}(S)`. For the
/// lazy-coupled variant the kernels are `(p_η + I)/2` and the minimum also
/// runs over the lazy transition `R(ζ, 0, ·) = δ_ζ`.
pub fn environment_profile(chain: &FiniteEnvChain, dynamics: Dynamics) -> Result<CertifiedProfile> {
    let pi = chain.pi();
    let kernels: Vec<Kernel> = match dynamics {
        Dynamics::Plain => chain.kernels.clone(),
        Dynamics::LazyCoupled => chain.kernels.iter().map(Kernel::half_lazy).collect(),
    };
    let e = chain.num_envs();
    profile_exact(pi, |s| {
        let phis: Vec<f64> = kernels.iter().map(|k| expansion_phi(k, pi, &s)).collect::<Result<_>>()?;
        let mut best = f64::INFINITY;
        for z in 0..e {
            let avg: f64 = (0..e).map(|eta| chain.r.get(z, eta) * phis[eta]).sum();
            best = best.min(avg);
            if dynamics == Dynamics::LazyCoupled {
                best = best.min(phis[z]);
            }
        }
        Ok(best)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralBoundReport {
    pub dynamics: Dynamics,
    pub gamma: f64,
    pub eps: f64,
    pub steps: u64,
    /// `ε^{1/4}`.
    pub threshold: f64,
    /// `P_ζ(χ(quenched law at n, π) ≥ ε^{1/4})` for each start `ζ`.
    pub tail: Vec<f64>,
    pub worst_tail: f64,
    pub method: Method,
    /// Wilson intervals per start in Monte Carlo mode.
    pub ci: Option<Vec<Interval>>,
    pub nodes: usize,
    pub pass: bool,
}

/// Node budget for exact path enumeration.
pub const PATH_NODE_BUDGET: usize = 4_000_000;
/// Paths per start in Monte Carlo mode.
pub const MC_PATHS: usize = 10_000;

/// Computes `n` from the integral bound and checks, for every start `ζ`,
/// `P_ζ(χ(P_{x,η}(Y_n ∈ ·), π) ≥ ε^{1/4}) ≤ ε^{1/4}`.
///
/// Exact mode walks the tree of environment paths depth first. A branch is
/// cut as soon as every continuation is certified below the threshold:
/// `χ(·, π)` never increases under a π-stationary kernel, and for the
/// lazy-coupled law the binomial mixture is bounded by convexity. When the
/// tree exceeds [`PATH_NODE_BUDGET`] nodes the check samples paths instead.
pub fn integral_bound_check(chain: &FiniteEnvChain, x: usize, eps: f64, dynamics: Dynamics, seed: u64) -> Result<IntegralBoundReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps must lie in (0, 1)"));
    }
    if x >= chain.size() {
        return Err(invalid(format!("start state {x} out of range")));
    }
    let base_gamma = chain.gamma();
    if base_gamma <= 0.0 && dynamics == Dynamics::Plain {
        return Err(Error::TheoremInapplicable(format!("some kernel has a zero diagonal entry (γ = {base_gamma})")));
    }
    let gamma = match dynamics {
        Dynamics::Plain => base_gamma,
        Dynamics::LazyCoupled => (1.0 + base_gamma) / 2.0,
    };
    let profile = environment_profile(chain, dynamics)?;
    let steps = integral_mixing_bound(&profile, gamma, chain.pi()[x], eps)?;
    let threshold = eps.powf(0.25);
    let n = usize::try_from(steps).map_err(|_| invalid("step count overflow"))?;
    let starts: Vec<usize> = (0..chain.num_envs()).collect();
    let exact: Vec<Option<(f64, usize)>> = starts
        .par_iter()
        .map(|&z0| {
            let mut walker = TreeWalk::new(chain, dynamics, x, n, threshold);
            walker.run(z0).map(|tail| (tail, walker.nodes))
        })
        .collect();
    let (tail, ci, method, nodes) = if exact.iter().all(Option::is_some) {
        let (tail, nodes): (Vec<f64>, Vec<usize>) = exact.into_iter().map(Option::unwrap).unzip();
        (tail, None, Method::Exact, nodes.into_iter().sum())
    } else {
        let results: Vec<(f64, Interval)> = starts
            .par_iter()
            .map(|&z0| sampled_tail(chain, dynamics, x, n, threshold, z0, derive_seed(seed, Stream::Environment, z0 as u64)))
            .collect::<Result<_>>()?;
        let (tail, ci): (Vec<f64>, Vec<Interval>) = results.into_iter().unzip();
        (tail, Some(ci), Method::MonteCarlo, 0)
    };
    let worst_tail = tail.iter().copied().fold(0.0, f64::max);
    let pass = match &ci {
        None => worst_tail <= threshold + 1e-12,
        Some(ci) => ci.iter().all(|i| i.lo <= threshold),
    };
    Ok(IntegralBoundReport { dynamics, gamma, eps, steps, threshold, tail, worst_tail, method, ci, nodes, pass })
}

fn chi_to(v: &[f64], pi: &[f64]) -> f64 {
    chi(&Dist::from_vec_unchecked(v.to_vec()), &Dist::from_vec_unchecked(pi.to_vec())).expect("π has full support")
}

struct TreeWalk<'a> {
    chain: &'a FiniteEnvChain,
    dynamics: Dynamics,
    n: usize,
    threshold: f64,
    nodes: usize,
    x: usize,
    /// `Bin(n, 1/2)` weights and upper tails, for the lazy-coupled law.
    pmf: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> TreeWalk<'a> {
    fn new(chain: &'a FiniteEnvChain, dynamics: Dynamics, x: usize, n: usize, threshold: f64) -> Self {
        let pmf: Vec<f64> = if dynamics == Dynamics::LazyCoupled { (0..=n).map(|j| binomial_half_pmf(n, j)).collect() } else { Vec::new() };
        let mut upper = vec![0.0; pmf.len() + 1];
        for j in (0..pmf.len()).rev() {
            upper[j] = upper[j + 1] + pmf[j];
        }
        Self { chain, dynamics, n, threshold, nodes: 0, x, pmf, upper }
    }

    /// Exact tail probability from `z0`, or `None` past the node budget.
    fn run(&mut self, z0: usize) -> Option<f64> {
        let m = self.chain.size();
        let mut v = vec![0.0; m];
        v[self.x] = 1.0;
        let (mix, chi_sum) = match self.dynamics {
            Dynamics::Plain => (Vec::new(), 0.0),
            Dynamics::LazyCoupled => (v.iter().map(|a| a * self.pmf[0]).collect(), self.pmf[0] * chi_to(&v, self.chain.pi())),
        };
        self.visit(z0, 0, &v, &mix, chi_sum, 1.0)
    }

    /// `v = δ_x p_{ζ_1} ⋯ p_{ζ_depth}`; for the lazy-coupled law, `mix` and
    /// `chi_sum` hold `Σ_{j ≤ depth} Bin(j) a_j` and `Σ_{j ≤ depth} Bin(j) χ(a_j)`.
    fn visit(&mut self, zeta: usize, depth: usize, v: &[f64], mix: &[f64], chi_sum: f64, weight: f64) -> Option<f64> {
        self.nodes += 1;
        if self.nodes > PATH_NODE_BUDGET {
            return None;
        }
        let pi = self.chain.pi();
        let c = chi_to(v, pi);
        if depth == self.n {
            let law_chi = match self.dynamics {
                Dynamics::Plain => c,
                Dynamics::LazyCoupled => chi_to(mix, pi),
            };
            return Some(if law_chi >= self.threshold { weight } else { 0.0 });
        }
        let bound = match self.dynamics {
            Dynamics::Plain => c,
            // χ(a_j) ≤ χ(a_depth) for j > depth
            Dynamics::LazyCoupled => chi_sum + self.upper[depth + 1] * c,
        };
        if bound < self.threshold {
            return Some(0.0);
        }
        let mut total = 0.0;
        for next in 0..self.chain.num_envs() {
            let w = self.chain.r.get(zeta, next);
            if w <= 0.0 {
                continue;
            }
            let v2 = self.chain.kernels[next].apply_left(v);
            let (mix2, chi2) = match self.dynamics {
                Dynamics::Plain => (Vec::new(), 0.0),
                Dynamics::LazyCoupled => {
                    let b = self.pmf[depth + 1];
                    (mix.iter().zip(&v2).map(|(a, c)| a + b * c).collect(), chi_sum + b * chi_to(&v2, pi))
                }
            };
            total += self.visit(next, depth + 1, &v2, &mix2, chi2, weight * w)?;
        }
        Some(total)
    }
}

fn sampled_tail(chain: &FiniteEnvChain, dynamics: Dynamics, x: usize, n: usize, threshold: f64, z0: usize, seed: u64) -> Result<(f64, Interval)> {
    let variant = variant_chain(chain);
    let hits: usize = (0..MC_PATHS)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, Stream::Environment, i as u64));
            let mut z = z0;
            let path: Vec<usize> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let row = chain.r.row(z);
                    let mut acc = 0.0;
                    z = row
                        .iter()
                        .position(|&p| {
                            acc += p;
                            u < acc
                        })
                        .unwrap_or(row.len() - 1);
                    z
                })
                .collect();
            let law = match dynamics {
                Dynamics::Plain => quenched_law(chain, &path, x)?,
                Dynamics::LazyCoupled => variant.quenched_law(&path, x, n)?,
            };
            Ok(usize::from(chi_to(law.as_slice(), chain.pi()) >= threshold))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok((hits as f64 / MC_PATHS as f64, wilson(hits, MC_PATHS, Z95)))
}

/// Quenched TV to `π` for every environment path of length `k` from `ζ_0`,
/// with the path probabilities; exhaustive, so only for small `|E|^k`.
pub fn all_quenched_tvs(chain: &FiniteEnvChain, zeta0: usize, x0: usize, k: usize) -> Result<Vec<(f64, f64)>> {
    let e = chain.num_envs();
    let count = e.checked_pow(k as u32).filter(|&c| c <= 1 << 20).ok_or(Error::Capability {
        what: "environment path enumeration",
        needed: usize::MAX,
        budget: 1 << 20,
    })?;
    let pi = Dist::from_vec_unchecked(chain.pi().to_vec());
    (0..count)
        .map(|code| {
            let mut c = code;
            let path: Vec<usize> = (0..k)
                .map(|_| {
                    let z = c % e;
                    c /= e;
                    z
                })
                .collect();
            let mut w = 1.0;
            let mut prev = zeta0;
            for &z in &path {
                w *= chain.r.get(prev, z);
                prev = z;
            }
            let law = quenched_law_silent(chain, &path, x0);
            Ok((w, tv(&law, &pi)?))
        })
        .collect()
}

fn quenched_law_silent(chain: &FiniteEnvChain, path: &[usize], x0: usize) -> Dist {
    let mut v = vec![0.0; chain.size()];
    v[x0] = 1.0;
    for &z in path {
        v = chain.kernels[z].apply_left(&v);
    }
    Dist::from_vec_unchecked(v)
}

/// Inhomogeneous chain from consecutive torus block kernels (uniform `π`).
/// Block kernels are doubly stochastic up to the uniformization truncation
/// (~1e-11); a few Sinkhorn sweeps bring them within the chain tolerance.
pub fn inhom_from_blocks(blocks: &[WalkKernel]) -> Result<InhomChain> {
    let m = blocks.first().map(WalkKernel::size).ok_or_else(|| invalid("no blocks"))?;
    let kernels = blocks.iter().map(|b| sinkhorn(&b.kernel)).collect::<Result<_>>()?;
    InhomChain::new(vec![1.0 / m as f64; m], kernels)
}

fn sinkhorn(k: &Kernel) -> Result<Kernel> {
    let m = k.size();
    let mut data = k.as_slice().to_vec();
    for _ in 0..50 {
        for x in 0..m {
            let s: f64 = data[x * m..(x + 1) * m].iter().sum();
            data[x * m..(x + 1) * m].iter_mut().for_each(|v| *v /= s);
        }
        for y in 0..m {
            let s: f64 = (0..m).map(|x| data[x * m + y]).sum();
            (0..m).for_each(|x| data[x * m + y] /= s);
        }
        let out = Kernel::from_raw(m, data.clone())?;
        if out.row_sum_error() < 1e-14 && out.column_sum_error() < 1e-14 {
            return Ok(out);
        }
    }
    Kernel::from_raw(m, data)
}

#[cfg(test)]
mod tests;
