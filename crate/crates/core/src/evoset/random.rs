//! Random kernels with a prescribed stationary law.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::Result;
use crate::kernel::Kernel;
use crate::rng::Rng;

use super::InhomChain;

/// Positive weights normalised to a probability vector, each at least
/// `floor / m` before normalisation.
pub fn random_pi(rng: &mut Rng, m: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| floor / m as f64 + rng.random::<f64>()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Reversible kernel with respect to `pi`: `π(x)K(x,y) = s·W(x,y)` for a
/// random symmetric `W`, remaining mass on the diagonal.
pub fn random_reversible(rng: &mut Rng, pi: &[f64]) -> Kernel {
    let m = pi.len();
    let mut w = vec![0.0; m * m];
    for x in 0..m {
        for y in x + 1..m {
            // sparsify some entries so that not every kernel is complete
            let v = if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() };
            w[x * m + y] = v;
            w[y * m + x] = v;
        }
    }
    let scale = (0..m)
        .map(|x| {
            let row: f64 = w[x * m..(x + 1) * m].iter().sum();
            if row > 0.0 {
                pi[x] / row
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min);
    let scale = if scale.is_finite() { scale * rng.random_range(0.2..1.0) } else { 0.0 };
    let mut data = vec![0.0; m * m];
    for x in 0..m {
        let mut off = 0.0;
        for y in (0..m).filter(|&y| y != x) {
            let v = scale * w[x * m + y] / pi[x];
            data[x * m + y] = v;
            off += v;
        }
        data[x * m + x] = (1.0 - off).max(0.0);
    }
    Kernel::from_raw(m, data).expect("row sums are 1 by construction")
}

/// Random mixture of `terms` permutation matrices; uniform is stationary.
pub fn random_doubly_stochastic(rng: &mut Rng, m: usize, terms: usize) -> Kernel {
    let mut weights: Vec<f64> = (0..terms).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut data = vec![0.0; m * m];
    let mut perm: Vec<usize> = (0..m).collect();
    for w in weights {
        perm.shuffle(rng);
        for (x, &y) in perm.iter().enumerate() {
            data[x * m + y] += w;
        }
    }
    Kernel::from_raw(m, data).expect("row sums are 1 by construction")
}

/// `αI + (1 − α)K`.
pub fn lazy(k: &Kernel, alpha: f64) -> Kernel {
    let m = k.size();
    let mut out = k.clone();
    for x in 0..m {
        for y in 0..m {
            let v = (1.0 - alpha) * k.get(x, y) + if x == y { alpha } else { 0.0 };
            out.set(x, y, v);
        }
    }
    out
}

/// Chain of `steps` kernels on `m` states. With `uniform_pi`, kernels are
/// doubly stochastic; otherwise reversible for a random full-support `π`.
/// Each kernel is made `laziness`-lazy.
pub fn random_inhom_chain(rng: &mut Rng, m: usize, steps: usize, uniform_pi: bool, laziness: f64) -> Result<InhomChain> {
    let pi = if uniform_pi { vec![1.0 / m as f64; m] } else { random_pi(rng, m, 0.5) };
    let kernels = (0..steps)
        .map(|_| {
            let k = if uniform_pi { random_doubly_stochastic(rng, m, 3) } else { random_reversible(rng, &pi) };
            lazy(&k, laziness)
        })
        .collect();
    InhomChain::new(pi, kernels)
}
