use super::*;
use crate::rng::rng_from_seed;
use proptest::prelude::*;

fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

fn half_kernel() -> Kernel {
    Kernel::new(2, vec![0.5; 4]).unwrap()
}

/// Adaptive Simpson in `v = ln u`, where the integrand is `φ(e^v)^{-power}`.
fn quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 80)
}

fn quadrature_integral(p: &StepProfile, lo: f64, hi: f64, power: i32) -> f64 {
    // splitting at the knots keeps each piece smooth
    let mut cuts = vec![lo.ln()];
    cuts.extend(p.knots().iter().filter(|&&k| k > lo && k < hi).map(|k| k.ln()));
    cuts.push(hi.ln());
    cuts.windows(2)
        .map(|w| {
            let mid = (0.5 * (w[0] + w[1])).exp();
            let level = p.eval(mid).powi(-power);
            quadrature(&|_v| level, w[0], w[1], 1e-13)
        })
        .sum()
}

/// Unsplit variant: the integrand jumps inside the range.
fn quadrature_integral_unsplit(p: &StepProfile, lo: f64, hi: f64, power: i32) -> f64 {
    quadrature(&|v| p.eval(v.exp()).powi(-power), lo.ln(), hi.ln(), 1e-12)
}

#[test]
fn q_flow_small_cases() {
    let k = half_kernel();
    let pi = uniform(2);
    assert!((q_flow(&k, &pi, &Mask::full(2), &Mask::full(2)) - 1.0).abs() < 1e-15);
    assert_eq!(q_flow(&k, &pi, &Mask::EMPTY, &Mask::full(2)), 0.0);
    assert!((q_flow(&k, &pi, &Mask::singleton(0), &Mask::singleton(1)) - 0.25).abs() < 1e-15);
}

#[test]
fn expansion_small_cases() {
    let k = half_kernel();
    let pi = uniform(2);
    assert_eq!(expansion_phi(&k, &pi, &Mask::full(2)).unwrap(), 0.0);
    assert!((expansion_phi(&k, &pi, &Mask::singleton(0)).unwrap() - 0.5).abs() < 1e-15);
    assert!(expansion_phi(&k, &pi, &Mask::EMPTY).is_err());
}

#[test]
fn open_cycle_half_arc_expansion_matches_heat_kernel() {
    let n = 8;
    let g = TorusGraph::new(1, n).unwrap();
    let env = sample_env(&g, DynParams::new(1.0, 0.5, 1.0).unwrap(), InitialCondition::AllOpen, 0).unwrap();
    let k = window_kernel_with(&env, 0.0, 1.0, Laziness::Plain, ExactBudget::default()).unwrap();
    let s = VertexSet::from_indices(n, 0..4usize);
    let heat = |y: usize| {
        (0..n)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                (-(1.0 - th.cos())).exp() * (th * y as f64).cos()
            })
            .sum::<f64>()
            / n as f64
    };
    let oracle: f64 = (0..4usize).map(|x| (4..8usize).map(|y| heat((y + n - x) % n)).sum::<f64>()).sum::<f64>() / 4.0;
    assert!((expansion_phi(&k.kernel, &uniform(n), &s).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn frozen_environment_average_is_the_kernel_expansion() {
    let k = half_kernel();
    let pi = uniform(2);
    let s = Mask::singleton(1);
    assert_eq!(phi_env_exact(&[(1.0, &k)], &pi, &s).unwrap(), expansion_phi(&k, &pi, &s).unwrap());
    let id = Kernel::identity(2);
    assert!((phi_env_exact(&[(0.25, &k), (0.75, &id)], &pi, &s).unwrap() - 0.125).abs() < 1e-15);
}

#[test]
fn two_state_profile_is_flat() {
    let p = kernel_profile(&half_kernel(), &uniform(2)).unwrap();
    assert_eq!(p.provenance(), Provenance::ExactEnumerated);
    for r in [0.5, 0.7, 1.0] {
        assert_eq!(p.profile().eval(r), 0.5);
    }
}

#[test]
fn complete_graph_profile_has_closed_form() {
    let k_states = 7;
    let k = Kernel::new(k_states, vec![1.0 / k_states as f64; k_states * k_states]).unwrap();
    let p = kernel_profile(&k, &uniform(k_states)).unwrap();
    for j in 1..=3 {
        let r = j as f64 / k_states as f64;
        assert!((p.profile().eval(r) - (1.0 - r)).abs() < 1e-12);
    }
    assert!(p.profile().values().windows(2).all(|w| w[1] < w[0]));
    assert_eq!(p.profile().eval(0.9), p.profile().eval(0.5));
}

#[test]
fn step_profile_validation() {
    assert!(StepProfile::new(vec![0.1, 0.2], vec![0.5, 0.6]).is_err());
    assert!(StepProfile::new(vec![0.2, 0.1], vec![0.5, 0.4]).is_err());
    assert!(StepProfile::new(vec![], vec![]).is_err());
    let p = StepProfile::new(vec![0.1, 0.3], vec![0.5, 0.25]).unwrap();
    assert_eq!(p.eval(0.2), 0.5);
    assert_eq!(p.eval(0.3), 0.25);
    assert_eq!(p.eval(5.0), 0.25);
}

#[test]
fn zero_profile_diverges() {
    let zero = CertifiedProfile { profile: StepProfile::new(vec![0.125, 0.25], vec![0.5, 0.0]).unwrap(), provenance: Provenance::ExactEnumerated };
    assert!(matches!(integral_mixing_bound(&zero, 0.5, 0.125, 0.1), Err(Error::DivergentIntegral(_))));
}

#[test]
fn constant_profile_step_count() {
    for &(gamma, phi0, pi_x, eps) in &[(0.5, 0.5, 0.25, 0.1), (0.25, 0.1, 0.01, 0.04), (0.9, 0.3, 0.5, 0.5)] {
        let p = CertifiedProfile { profile: StepProfile::new(vec![pi_x], vec![phi0]).unwrap(), provenance: Provenance::ExactEnumerated };
        let g: f64 = f64::min(gamma, 0.5);
        let expect = 1 + ((2.0 * (1.0 - g).powi(2) / (g * g * phi0 * phi0)) * (1.0 / (eps * pi_x)).ln()).ceil() as u64;
        assert_eq!(integral_mixing_bound(&p, gamma, pi_x, eps).unwrap(), expect);
    }
    let p = CertifiedProfile { profile: StepProfile::new(vec![0.25], vec![0.5]).unwrap(), provenance: Provenance::ExactEnumerated };
    let closed = p.profile().integral(1.0, 40.0, 2).unwrap();
    assert!((closed - quadrature_integral_unsplit(p.profile(), 1.0, 40.0, 2)).abs() < 1e-9);
    assert!((closed - 4.0 * 40f64.ln()).abs() < 1e-12);
}

#[test]
fn closed_form_matches_quadrature_on_random_profiles() {
    let mut rng = rng_from_seed(12);
    for _ in 0..100 {
        let count = rng.random_range(1..8);
        let mut knots: Vec<f64> = (0..count).map(|_| rng.random_range(0.001..0.5)).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut values: Vec<f64> = (0..knots.len()).map(|_| rng.random_range(0.05..1.0)).collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let p = StepProfile::new(knots, values).unwrap();
        let lo = p.pi_star() * rng.random_range(1.0..4.0);
        let hi = rng.random_range(1.0..100.0);
        for power in [1, 2] {
            let closed = p.integral(lo, hi, power).unwrap();
            let quad = quadrature_integral(&p, lo, hi, power);
            assert!((closed - quad).abs() <= 1e-9 * closed.max(1.0), "{closed} vs {quad}");
            let rough = quadrature_integral_unsplit(&p, lo, hi, power);
            assert!((closed - rough).abs() <= 1e-6 * closed.max(1.0), "{closed} vs {rough}");
        }
    }
}

#[test]
fn analytic_profile_is_a_lower_step_of_the_curve() {
    let (c, mu, n, d) = (0.3, 0.25, 16, 2);
    let p = analytic_torus_profile(c, mu, n, d).unwrap();
    assert_eq!(p.provenance(), Provenance::AnalyticTorusBound);
    let curve = |r: f64| c * mu * mu / (n as f64 * r.min(0.5).sqrt());
    let mut r = p.profile().pi_star();
    while r < 2.0 {
        assert!(p.profile().eval(r) <= curve(r) * (1.0 + 1e-12));
        r *= 1.1;
    }
    for eps in [0.1, 0.01] {
        let closed = analytic_torus_integral(c, mu, n, d, eps).unwrap();
        let stepped = p.profile().integral(4.0 / (n * n) as f64, 4.0 / eps, 2).unwrap();
        assert!(stepped >= closed * (1.0 - 1e-12));
        assert!(stepped <= closed * 2f64.powf(2.0 / d as f64) * (1.0 + 1e-12));
        let exact_quad = quadrature(&|v: f64| curve(v.exp()).powi(-2), (4.0 / (n * n) as f64).ln(), (4.0 / eps).ln(), 1e-6);
        assert!((exact_quad - closed).abs() < 1e-6 * closed);
    }
}

#[test]
fn analytic_integral_has_the_n_over_mu_squared_shape() {
    let shape =
        |n: usize, mu: f64, eps: f64| analytic_torus_integral(0.5, mu, n, 1, eps).unwrap() / ((n as f64 / (mu * mu)).powi(2) * (1.0 / eps).ln());
    let limit = 0.25 / 0.25;
    for &(n, mu) in &[(64, 0.5), (256, 0.125), (1024, 0.25)] {
        assert!((shape(n, mu, 1e-12) - limit).abs() / limit < 0.15);
    }
    assert!((shape(64, 0.5, 1e-3) - shape(64, 0.125, 1e-3)).abs() < 1e-12);
}

#[test]
fn coordinate_box_family_on_small_torus() {
    let g = TorusGraph::new(2, 4).unwrap();
    assert_eq!(coordinate_boxes(&g).len(), 12);
    assert_eq!(singletons(&g).len(), 16);
    let sets = random_sets(&g, 3, 1);
    assert_eq!(sets.len(), 24);
    assert!(sets.iter().all(|s| 2 * s.len() <= 16));
}

#[test]
fn family_profile_is_an_upper_envelope() {
    let g = TorusGraph::new(2, 3).unwrap();
    let env = sample_env(&g, DynParams::new(0.5, 0.5, 1.0).unwrap(), InitialCondition::Stationary, 5).unwrap();
    let k = window_kernel_with(&env, 0.0, 1.0, Laziness::Plain, ExactBudget::default()).unwrap();
    let pi = uniform(9);
    let exact = kernel_profile(&k.kernel, &pi).unwrap();
    let diag = family_profile(&k.kernel, &pi, &coordinate_boxes(&g), "boxes").unwrap();
    assert_eq!(diag.provenance(), Provenance::FamilyRestricted);
    for &r in diag.profile().knots() {
        assert!(diag.profile().eval(r) >= exact.profile().eval(r) - 1e-12);
    }
}

#[test]
fn torus_check_trivial_cases() {
    let g = TorusGraph::new(1, 8).unwrap();
    let s = VertexSet::from_indices(8, 0..4usize);
    let c = lemma_witness_constant(1, 2.0);
    let open = sample_env(&g, DynParams::new(1.0, 0.5, 1.0).unwrap(), InitialCondition::AllOpen, 0).unwrap();
    let r = torus_phi_lower_bound_check(&open, &s, 0.0, c, ExactBudget::default(), 0, 0).unwrap();
    assert_eq!(r.beta, 1.0);
    assert!(r.pass && r.ratio.is_finite() && r.exact);
    let closed = sample_env(&g, DynParams::new(0.5, 0.0, 1.0).unwrap(), InitialCondition::AllClosed, 0).unwrap();
    let r = torus_phi_lower_bound_check(&closed, &s, 0.0, c, ExactBudget::default(), 0, 0).unwrap();
    assert_eq!((r.beta, r.rhs, r.phi), (0.0, 0.0, 0.0));
    assert!(r.pass);
    assert!(torus_phi_lower_bound_check(&closed, &VertexSet::from_indices(8, 0..5usize), 0.0, c, ExactBudget::default(), 0, 0).is_err());
}

#[test]
fn torus_check_monte_carlo_fallback_agrees() {
    let g = TorusGraph::new(1, 10).unwrap();
    let env = sample_env(&g, DynParams::new(0.5, 0.25, 2.0).unwrap(), InitialCondition::Stationary, 3).unwrap();
    let s = VertexSet::from_indices(10, 0..5usize);
    let c = lemma_witness_constant(1, 2.0);
    let exact = torus_phi_lower_bound_check(&env, &s, 1.0, c, ExactBudget::default(), 0, 0).unwrap();
    let mc = torus_phi_lower_bound_check(&env, &s, 1.0, c, ExactBudget(4), 20000, 7).unwrap();
    assert!(!mc.exact);
    assert!((mc.phi - exact.phi).abs() < 2.0 * mc.phi_half_width + 1e-3);
    assert_eq!(mc.beta, exact.beta);
}

#[test]
fn torus_check_has_no_violations_on_a_cycle() {
    let g = TorusGraph::new(1, 16).unwrap();
    let s = VertexSet::from_indices(16, 0..8usize);
    let c = lemma_witness_constant(1, 2.0);
    let params = DynParams::new(0.5, 0.25, 1.0).unwrap();
    for seed in 0..20 {
        let env = sample_env(&g, params, InitialCondition::Stationary, seed).unwrap();
        assert!(torus_phi_lower_bound_check(&env, &s, 0.0, c, ExactBudget::default(), 0, 0).unwrap().pass);
    }
}

#[test]
fn environment_average_bounds_from_closed_start() {
    let g = TorusGraph::new(1, 8).unwrap();
    let s = VertexSet::from_indices(8, 0..4usize);
    let est = phi_env_torus(&g, 0.5, 0.5, &[false; 8], &s, 1000, 2).unwrap();
    assert!(est.mean > 0.0 && est.mean < 0.5);
}

fn random_doubly_stochastic(m: usize, seed: u64) -> Kernel {
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; m * m];
    let mut weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    for w in weights {
        let mut perm: Vec<usize> = (0..m).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        for (x, &y) in perm.iter().enumerate() {
            data[x * m + y] += w;
        }
    }
    Kernel::new(m, data).unwrap()
}

proptest! {
    #[test]
    fn dual_routes_and_complement_symmetry(seed in any::<u64>(), bits in 1u64..63) {
        let k = random_doubly_stochastic(6, seed);
        let pi = uniform(6);
        let s = Mask(bits);
        let a = expansion_phi(&k, &pi, &s).unwrap();
        let b = expansion_phi_by_retention(&k, &pi, &s).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        let sc = s.complement(6);
        let lhs = expansion_phi(&k, &pi, &sc).unwrap() * sc.mass(&pi);
        prop_assert!((lhs - a * s.mass(&pi)).abs() < 1e-12);
        prop_assert!((q_flow(&k, &pi, &s, &sc) - q_flow(&k, &pi, &sc, &s)).abs() < 1e-12);
    }

    #[test]
    fn bound_is_monotone(phi0 in 0.05f64..1.0, scale in 1.0f64..3.0, eps in 0.01f64..0.5, gamma in 0.05f64..0.5) {
        let mk = |v: f64| CertifiedProfile { profile: StepProfile::new(vec![0.01, 0.1], vec![v, v * 0.8]).unwrap(), provenance: Provenance::ExactEnumerated };
        let small = integral_mixing_bound(&mk(phi0 / scale), gamma, 0.05, eps).unwrap();
        let large = integral_mixing_bound(&mk(phi0), gamma, 0.05, eps).unwrap();
        prop_assert!(large <= small);
        prop_assert!(integral_mixing_bound(&mk(phi0), gamma, 0.05, eps / 2.0).unwrap() >= large);
    }

    #[test]
    fn exact_profiles_are_nonincreasing(seed in any::<u64>()) {
        let k = random_doubly_stochastic(5, seed);
        let p = kernel_profile(&k, &uniform(5)).unwrap();
        prop_assert!(p.profile().values().windows(2).all(|w| w[1] <= w[0]));
    }
}
