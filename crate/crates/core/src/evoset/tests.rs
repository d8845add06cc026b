use super::*;
use crate::rng::rng_from_seed;
use proptest::prelude::*;

fn half2() -> Kernel {
    Kernel::new(2, vec![0.5; 4]).unwrap()
}

fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Law of `S̃` obtained by evaluating the threshold map at one point inside
/// each interval between consecutive ratio values.
fn midpoint_law(s: Mask, k: &Kernel, pi: &[f64]) -> SetLaw {
    let r = threshold_ratios(s, k, pi);
    let mut cuts: Vec<f64> = r.iter().copied().chain([0.0, 1.0]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13);
    let mut map = BTreeMap::new();
    for w in cuts.windows(2) {
        let u = 0.5 * (w[0] + w[1]);
        *map.entry(evolve_step(s, k, pi, u).0).or_insert(0.0) += w[1] - w[0];
    }
    SetLaw::from_map(map)
}

#[test]
fn absorbing_and_trivial_steps() {
    let k = half2();
    let pi = uniform(2);
    assert_eq!(evolve_step(Mask::EMPTY, &k, &pi, 0.0), Mask::EMPTY);
    assert_eq!(evolve_step(Mask::full(2), &k, &pi, 1.0), Mask::full(2));
    assert_eq!(evolve_step(Mask::singleton(0), &k, &pi, 0.0), Mask::full(2));
    assert_eq!(evolve_step(Mask::singleton(0), &k, &pi, 0.5), Mask::full(2));
    assert_eq!(evolve_step(Mask::singleton(0), &k, &pi, 0.5 + 1e-9), Mask::EMPTY);
}

#[test]
fn two_state_laws() {
    let k = half2();
    let pi = uniform(2);
    assert_eq!(step_law(Mask::EMPTY, &k, &pi), SetLaw::point(Mask::EMPTY));
    let law = step_law(Mask::singleton(0), &k, &pi);
    assert_eq!(law.entries(), &[(Mask::EMPTY, 0.5), (Mask::full(2), 0.5)]);
    let doob = doob_step_law(Mask::singleton(0), &k, &pi).unwrap();
    assert_eq!(doob.entries(), &[(Mask::full(2), 1.0)]);
    let psi = expected_sqrt_ratio(Mask::singleton(0), &k, &pi).unwrap();
    assert!((psi - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
    assert!(doob_step_law(Mask::EMPTY, &k, &pi).is_err());
}

#[test]
fn identity_kernel_has_zero_psi() {
    let pi = vec![0.1, 0.2, 0.3, 0.4];
    let s = Mask::from_indices([1usize, 3]);
    assert_eq!(expected_sqrt_ratio(s, &Kernel::identity(4), &pi).unwrap(), 0.0);
    assert_eq!(step_law(s, &Kernel::identity(4), &pi), SetLaw::point(s));
}

#[test]
fn chain_validation() {
    let pi = vec![0.5, 0.5];
    let bad = Kernel::new(2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    assert!(InhomChain::new(pi.clone(), vec![bad]).is_err());
    assert!(InhomChain::new(vec![0.0, 1.0], vec![]).is_err());
    assert!(InhomChain::new(pi, vec![half2()]).is_ok());
}

#[test]
fn exact_laws_match_midpoint_oracle_and_martingale() {
    let mut rng = rng_from_seed(1);
    for trial in 0..1000 {
        let m = 4;
        let chain = random_inhom_chain(&mut rng, m, 1, trial % 2 == 0, 0.0).unwrap();
        let (pi, k) = (chain.pi(), &chain.kernels()[0]);
        let s = Mask(rng.random_range(1..(1 << m) - 1));
        let law = step_law(s, k, pi);
        assert!(law.max_abs_diff(&midpoint_law(s, k, pi)) < 1e-12);
        assert!((law.total() - 1.0).abs() < 1e-12);
        assert!((law.expect(|t| t.mass(pi)) - s.mass(pi)).abs() < 1e-12);
        let doob = doob_step_law(s, k, pi).unwrap();
        assert!((doob.total() - 1.0).abs() < 1e-12);
        assert_eq!(doob.prob(Mask::EMPTY), 0.0);
    }
}

#[test]
fn step_law_matches_sampled_frequencies() {
    let mut rng = rng_from_seed(2);
    let chain = random_inhom_chain(&mut rng, 5, 1, false, 0.2).unwrap();
    let (pi, k) = (chain.pi(), &chain.kernels()[0]);
    let s = Mask::from_indices([0usize, 2]);
    let law = step_law(s, k, pi);
    let n = 40000;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for _ in 0..n {
        *counts.entry(evolve_step(s, k, pi, rng.random()).0).or_insert(0) += 1;
    }
    for (&bits, &c) in &counts {
        let p = law.prob(Mask(bits));
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() <= 4.0 * sd + 1e-9);
    }
}

#[test]
fn complement_duality() {
    let mut rng = rng_from_seed(3);
    for _ in 0..300 {
        let chain = random_inhom_chain(&mut rng, 5, 1, false, 0.1).unwrap();
        let (pi, k) = (chain.pi(), &chain.kernels()[0]);
        let s = Mask(rng.random_range(0..32));
        let sc = s.complement(5);
        assert!(step_law(sc, k, pi).max_abs_diff(&step_law(s, k, pi).complemented(5)) < 1e-12);
        for _ in 0..10 {
            let u: f64 = rng.random();
            let r = threshold_ratios(s, k, pi);
            if r.iter().any(|&v| (v - (1.0 - u)).abs() < 1e-9) {
                continue;
            }
            assert_eq!(evolve_step(sc, k, pi, u), evolve_step(s, k, pi, 1.0 - u).complement(5));
        }
    }
}

#[test]
fn psi_dominates_squared_expansion_on_lazy_chains() {
    let mut rng = rng_from_seed(4);
    for trial in 0..1000 {
        let alpha = rng.random_range(0.05..0.9);
        let chain = random_inhom_chain(&mut rng, 5, 1, trial % 3 == 0, alpha).unwrap();
        let (pi, k) = (chain.pi(), &chain.kernels()[0]);
        for bits in 1..31u64 {
            let (psi, rhs) = psi_phi_pair(Mask(bits), k, pi).unwrap();
            assert!(psi >= rhs - 1e-12, "trial {trial} set {bits}: {psi} < {rhs}");
        }
    }
}

#[test]
fn runs_from_full_set_are_constant() {
    let mut rng = rng_from_seed(5);
    let chain = random_inhom_chain(&mut rng, 4, 10, true, 0.5).unwrap();
    let run = run_evoset(&chain, Mask::full(4), 10, 1).unwrap();
    assert!(run.iter().all(|s| s.set == Mask::full(4)));
    assert!(run_evoset(&chain, Mask::full(4), 11, 1).is_err());
}

#[test]
fn ordinary_runs_preserve_mean_mass() {
    let mut rng = rng_from_seed(6);
    let chain = random_inhom_chain(&mut rng, 6, 8, false, 0.3).unwrap();
    let s0 = Mask::from_indices([0usize, 1]);
    let runs = 10000;
    let finals: Vec<f64> = (0..runs).map(|r| run_evoset(&chain, s0, 8, r).unwrap()[8].mass).collect();
    let est = crate::stats::mean_estimate(&finals);
    assert!((est.mean - s0.mass(chain.pi())).abs() <= 3.0 * est.std_err);
}

#[test]
fn doob_runs_avoid_the_empty_set() {
    let mut rng = rng_from_seed(7);
    let chain = random_inhom_chain(&mut rng, 5, 20, false, 0.2).unwrap();
    for seed in 0..200 {
        let run = doob_run(&chain, Mask::singleton(2), 20, seed).unwrap();
        assert!(run.iter().all(|s| !s.state.set.is_empty() && s.state.z.is_some()));
        let last = run.last().unwrap();
        assert!((last.weight - chain.pi()[2] / last.state.mass).abs() < 1e-12);
    }
}

#[test]
fn marginal_identity_holds() {
    let mut rng = rng_from_seed(8);
    let chain = random_inhom_chain(&mut rng, 5, 6, false, 0.0).unwrap();
    assert_eq!(marginal_identity_check(&chain, 1, 0).unwrap().max_error, 0.0);
    let r = marginal_identity_check(&chain, 1, 6).unwrap();
    assert!(r.max_error <= 1e-9 + r.pruned, "{r:?}");
    let big = InhomChain::new(uniform(15), vec![Kernel::identity(15)]).unwrap();
    assert!(matches!(marginal_identity_check(&big, 0, 1), Err(Error::Capability { .. })));
}

#[test]
fn z_at_time_zero() {
    let m = 6;
    let chain = InhomChain::new(uniform(m), vec![Kernel::identity(m)]).unwrap();
    // identity kernels have ψ = 0, so there is no step count
    let frozen = doob_z_bound_check(&chain, 0, 0, 0.5).unwrap();
    assert_eq!((frozen.psi_steps, frozen.z_at_psi_steps), (None, None));
    assert!((z_value(Mask::singleton(0), &uniform(m)).unwrap() - (m as f64).sqrt()).abs() < 1e-12);
    assert_eq!(z_value(Mask::EMPTY, &uniform(m)), None);
    let mut rng = rng_from_seed(9);
    let lazy_chain = random_inhom_chain(&mut rng, m, 3, true, 0.5).unwrap();
    let r = doob_z_bound_check(&lazy_chain, 0, 0, 0.5).unwrap();
    assert!((r.expected_z[0] - (m as f64).sqrt()).abs() < 1e-12);
    assert!((r.chi[0] - ((m - 1) as f64).sqrt()).abs() < 1e-12);
}

#[test]
fn two_state_z_after_one_step() {
    let chain = InhomChain::new(uniform(2), vec![half2(); 30]).unwrap();
    let r = doob_z_bound_check(&chain, 0, 1, 0.1).unwrap();
    assert_eq!(r.chi[1], 0.0);
    assert_eq!(r.expected_z[1], 0.0);
    assert!(r.chi_ok && r.z_ok);
}

#[test]
fn z_bound_at_psi_step_count_on_lazy_instance() {
    let mut rng = rng_from_seed(10);
    let pool: Vec<Kernel> = (0..3).map(|_| lazy(&random_reversible(&mut rng, &uniform(4)), 0.5)).collect();
    let refs: Vec<&Kernel> = pool.iter().collect();
    let steps = psi_step_count(&psi_profile(&refs, &uniform(4)).unwrap(), 0.25, 0.04).unwrap() as usize;
    let kernels = (0..steps.max(1)).map(|_| pool[rng.random_range(0..3)].clone()).collect();
    let chain = InhomChain::new(uniform(4), kernels).unwrap();
    let r = doob_z_bound_check(&chain, 0, 1, 0.04).unwrap();
    assert!(r.psi_steps.unwrap() as usize <= chain.len());
    assert!(r.z_at_psi_steps.unwrap() <= 0.2 + 1e-9);
    assert!(r.chi_ok && r.z_ok);
    assert!(r.supermartingale_excess <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn doob_normalisation_and_contraction(seed in any::<u64>(), alpha in 0.05f64..0.9) {
        let mut rng = rng_from_seed(seed);
        let chain = random_inhom_chain(&mut rng, 4, 4, false, alpha).unwrap();
        let r = doob_z_bound_check(&chain, 0, 4, 0.5).unwrap();
        prop_assert!(r.chi_ok);
        prop_assert!(r.supermartingale_excess <= 1e-12);
    }
}
