#![allow(clippy::needless_range_loop)]

use super::*;
use crate::evoset::{lazy, random_doubly_stochastic, random_reversible};
use crate::rng::rng_from_seed;

fn random_r(rng: &mut crate::rng::Rng, e: usize) -> Kernel {
    let rows: Vec<Vec<f64>> = (0..e)
        .map(|_| {
            let w: Vec<f64> = (0..e).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    Kernel::from_rows(&rows).unwrap()
}

fn random_chain(seed: u64, e: usize, m: usize, alpha: f64) -> FiniteEnvChain {
    let mut rng = rng_from_seed(seed);
    let pi = vec![1.0 / m as f64; m];
    let kernels = (0..e).map(|_| lazy(&random_doubly_stochastic(&mut rng, m, 3), alpha)).collect();
    FiniteEnvChain::new(random_r(&mut rng, e), kernels, pi).unwrap()
}

/// Tail probability by listing every path of length `n` from `z0`.
fn brute_force_tail(chain: &FiniteEnvChain, dynamics: Dynamics, x: usize, n: usize, threshold: f64, z0: usize) -> f64 {
    let e = chain.num_envs();
    let variant = variant_chain(chain);
    let mut total = 0.0;
    for code in 0..e.pow(n as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..n)
            .map(|_| {
                let z = c % e;
                c /= e;
                z
            })
            .collect();
        let mut w = 1.0;
        let mut prev = z0;
        for &z in &path {
            w *= chain.r().get(prev, z);
            prev = z;
        }
        let law = match dynamics {
            Dynamics::Plain => quenched_law(chain, &path, x).unwrap(),
            Dynamics::LazyCoupled => variant.quenched_law(&path, x, n).unwrap(),
        };
        if chi_to(law.as_slice(), chain.pi()) >= threshold {
            total += w;
        }
    }
    total
}

#[test]
fn single_environment_annealed_chain_is_the_kernel() {
    let mut rng = rng_from_seed(1);
    let k = random_reversible(&mut rng, &[0.2, 0.3, 0.5]);
    let chain = FiniteEnvChain::new(Kernel::identity(1), vec![k.clone()], vec![0.2, 0.3, 0.5]).unwrap();
    assert!(annealed_kernel(&chain).unwrap().q.max_abs_diff(&k) < 1e-15);
}

#[test]
fn construction_rejects_invalid_chains() {
    let pi = vec![0.5, 0.5];
    let bad = Kernel::new(2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    assert!(FiniteEnvChain::new(Kernel::identity(1), vec![bad], pi.clone()).is_err());
    assert!(FiniteEnvChain::new(Kernel::identity(2), vec![Kernel::identity(2)], pi).is_err());
}

#[test]
fn annealed_rows_sum_to_one() {
    let chain = random_chain(2, 2, 3, 0.2);
    let a = annealed_kernel(&chain).unwrap();
    assert_eq!(a.q.size(), 6);
    assert!(a.q.row_sum_error() < 1e-12);
}

#[test]
fn counterexample_annealed_and_quenched() {
    let chain = counterexample_chain();
    let a = annealed_kernel(&chain).unwrap();
    let u = Dist::uniform(2);
    for z0 in 0..2 {
        for x0 in 0..2 {
            assert_eq!(tv(&a.walk_marginal(z0, x0, 1), &u).unwrap(), 0.0);
        }
    }
    for k in 0..=8 {
        for (w, d) in all_quenched_tvs(&chain, 0, 0, k).unwrap() {
            assert_eq!(w, 0.5f64.powi(k as i32));
            assert_eq!(d, 0.5);
        }
    }
    assert!(matches!(integral_bound_check(&chain, 0, 0.1, Dynamics::Plain, 0), Err(Error::TheoremInapplicable(_))));
}

#[test]
fn annealed_law_is_the_path_average_of_quenched_laws() {
    let mut rng = rng_from_seed(3);
    let pi = vec![0.2, 0.3, 0.5];
    let kernels = (0..3).map(|_| random_reversible(&mut rng, &pi)).collect();
    let chain = FiniteEnvChain::new(random_r(&mut rng, 3), kernels, pi).unwrap();
    let a = annealed_kernel(&chain).unwrap();
    let k = 4;
    let mut avg = [0.0; 3];
    for code in 0..81usize {
        let path: Vec<usize> = (0..k).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let mut w = chain.r().get(1, path[0]);
        for p in path.windows(2) {
            w *= chain.r().get(p[0], p[1]);
        }
        let q = quenched_law(&chain, &path, 2).unwrap();
        avg.iter_mut().zip(q.as_slice()).for_each(|(a, b)| *a += w * b);
    }
    let direct = a.walk_marginal(1, 2, k);
    for y in 0..3 {
        assert!((avg[y] - direct.as_slice()[y]).abs() < 1e-14);
    }
    // convexity: annealed TV never exceeds the mean quenched TV
    let pi_d = Dist::from_vec_unchecked(chain.pi().to_vec());
    for k in 0..6 {
        let mean_q: f64 = all_quenched_tvs(&chain, 1, 2, k).unwrap().iter().map(|(w, d)| w * d).sum();
        assert!(tv(&a.walk_marginal(1, 2, k), &pi_d).unwrap() <= mean_q + 1e-12);
    }
}

#[test]
fn quenched_law_edge_cases() {
    let chain = counterexample_chain();
    assert_eq!(quenched_law(&chain, &[], 1).unwrap().as_slice(), &[0.0, 1.0]);
    assert!(quenched_law(&chain, &[2], 0).is_err());
    let chain = random_chain(4, 2, 3, 0.1);
    // off-support paths are still computed
    let mut r = chain.r().clone();
    r.set(0, 1, 0.0);
    r.set(0, 0, 1.0);
    let blocked = FiniteEnvChain::new(r, chain.kernels().to_vec(), chain.pi().to_vec()).unwrap();
    assert!(quenched_law(&blocked, &[0, 1], 0).is_ok());
}

#[test]
fn variant_with_one_environment_is_the_half_lazy_chain() {
    let mut rng = rng_from_seed(5);
    let k = random_doubly_stochastic(&mut rng, 4, 2);
    let chain = FiniteEnvChain::new(Kernel::identity(1), vec![k.clone()], vec![0.25; 4]).unwrap();
    let v = variant_chain(&chain);
    let lazy_k = k.half_lazy();
    let mut direct = vec![0.0, 1.0, 0.0, 0.0];
    for _ in 0..7 {
        direct = lazy_k.apply_left(&direct);
    }
    let law = v.quenched_law(&[0; 7], 1, 7).unwrap();
    for y in 0..4 {
        assert!((law.as_slice()[y] - direct[y]).abs() < 1e-14);
    }
    assert!(v.effective_kernel(0).max_abs_diff(&lazy_k) < 1e-15);
}

#[test]
fn variant_kernels_keep_pi_and_laziness() {
    let v = variant_chain(&counterexample_chain());
    for z in 0..2 {
        assert!(v.effective_kernel(z).stationarity_error(&[0.5, 0.5]) < 1e-15);
        assert!(v.effective_kernel(z).min_diagonal() >= 0.5);
    }
    assert_eq!(v.gamma(), 0.5);
    assert_eq!(v.augmented_r(0, false, 0), 1.0);
    assert_eq!(v.augmented_r(0, false, 1), 0.0);
    assert_eq!(v.augmented_r(0, true, 1), 0.5);
}

#[test]
fn pruned_tree_walk_matches_brute_force() {
    for (seed, dynamics) in [(6, Dynamics::Plain), (7, Dynamics::LazyCoupled), (8, Dynamics::Plain), (9, Dynamics::LazyCoupled)] {
        let chain = random_chain(seed, 2, 4, 0.3);
        for &threshold in &[0.2, 0.5, 0.9] {
            for z0 in 0..2 {
                let mut w = TreeWalk::new(&chain, dynamics, 1, 9, threshold);
                let fast = w.run(z0).unwrap();
                let slow = brute_force_tail(&chain, dynamics, 1, 9, threshold, z0);
                assert!((fast - slow).abs() < 1e-12, "{dynamics:?} t={threshold}: {fast} vs {slow}");
            }
        }
    }
}

#[test]
fn sampled_tail_agrees_with_exact() {
    let chain = random_chain(10, 2, 4, 0.2);
    let mut w = TreeWalk::new(&chain, Dynamics::Plain, 0, 6, 0.6);
    let exact = w.run(0).unwrap();
    let (est, ci) = sampled_tail(&chain, Dynamics::Plain, 0, 6, 0.6, 0, 3).unwrap();
    assert!(ci.contains(exact) || (est - exact).abs() < 0.02, "{est} vs {exact}");
}

#[test]
fn frozen_single_environment_bound_holds() {
    let mut rng = rng_from_seed(11);
    let k = lazy(&random_doubly_stochastic(&mut rng, 5, 3), 0.5);
    let chain = FiniteEnvChain::new(Kernel::identity(1), vec![k], vec![0.2; 5]).unwrap();
    let r = integral_bound_check(&chain, 0, 0.1, Dynamics::Plain, 0).unwrap();
    assert!(r.pass, "{r:?}");
    assert_eq!(r.method, Method::Exact);
    assert_eq!(r.tail, vec![0.0]);
}

#[test]
fn two_environment_lazy_instance_tail_is_below_threshold() {
    let chain = random_chain(12, 2, 4, 0.5);
    for dynamics in [Dynamics::Plain, Dynamics::LazyCoupled] {
        let r = integral_bound_check(&chain, 0, 0.04, dynamics, 0).unwrap();
        assert!((r.threshold - 0.04f64.powf(0.25)).abs() < 1e-15);
        assert!(r.pass && r.worst_tail <= 0.4472135955, "{r:?}");
    }
}

#[test]
fn counterexample_variant_has_no_finite_bound() {
    // after a lazy step the identity environment stays, and its effective
    // kernel is the identity, so the profile vanishes
    let r = integral_bound_check(&counterexample_chain(), 0, 0.1, Dynamics::LazyCoupled, 0);
    assert!(matches!(r, Err(Error::DivergentIntegral(_))));
}

#[test]
fn chain_spec_round_trip() {
    let chain = random_chain(13, 3, 4, 0.25);
    let mut buf = Vec::new();
    write_chain(&chain, &mut buf).unwrap();
    assert_eq!(read_chain(buf.as_slice()).unwrap(), chain);
    let text = String::from_utf8(buf).unwrap().replacen("dynaperc-chain 1", "dynaperc-chain 9", 1);
    assert!(matches!(read_chain(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    let truncated: String = String::from_utf8({
        let mut b = Vec::new();
        write_chain(&chain, &mut b).unwrap();
        b
    })
    .unwrap()
    .lines()
    .take(5)
    .collect::<Vec<_>>()
    .join("\n");
    assert!(read_chain(truncated.as_bytes()).is_err());
}

#[test]
fn torus_blocks_become_an_inhomogeneous_chain() {
    use crate::dynenv::{sample_env, DynParams, InitialCondition};
    use crate::torus::TorusGraph;
    use crate::walk::{block_chain, BlockLength, Laziness};
    let g = TorusGraph::new(1, 4).unwrap();
    let env = sample_env(&g, DynParams::new(0.5, 0.5, 3.0).unwrap(), InitialCondition::Stationary, 1).unwrap();
    let blocks = block_chain(&env, BlockLength::Unit, Laziness::HalfLazy).unwrap();
    let chain = inhom_from_blocks(&blocks).unwrap();
    assert_eq!(chain.len(), 3);
    assert!(crate::evoset::marginal_identity_check(&chain, 0, 3).unwrap().max_error < 1e-12);
}
