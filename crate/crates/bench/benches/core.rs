use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dynaperc_core::dist::quenched_mixing_time_all;
use dynaperc_core::evoset::{random_inhom_chain, step_law};
use dynaperc_core::rng::rng_from_seed;
use dynaperc_core::walk::{exact_quenched_distribution, simulate_walk};
use dynaperc_core::{sample_env, DynParams, ExactBudget, Grid, InitialCondition, Mask, TorusGraph};

fn env_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_env");
    for n in [16, 64] {
        let g = TorusGraph::new(2, n).unwrap();
        let params = DynParams::new(0.5, 0.125, 100.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| sample_env(g, params, InitialCondition::Stationary, black_box(3)).unwrap())
        });
    }
    group.finish();
}

fn exact_evolution(c: &mut Criterion) {
    let g = TorusGraph::new(1, 32).unwrap();
    let env = sample_env(&g, DynParams::new(0.5, 0.125, 2048.0).unwrap(), InitialCondition::Stationary, 5).unwrap();
    c.bench_function("exact_law_d1_n32_t512", |b| b.iter(|| exact_quenched_distribution(&env, 0, black_box(512.0)).unwrap()));
    let grid = Grid::blocks(0.125, 256).unwrap();
    c.bench_function("quenched_tmix_all_d1_n32", |b| b.iter(|| quenched_mixing_time_all(&env, 0.25, &grid, ExactBudget::default()).unwrap()));
    c.bench_function("simulate_walk_d1_n32_t2048", |b| b.iter(|| simulate_walk(&env, 0, 2048.0, black_box(9), &[]).unwrap()));
}

fn evolving_sets(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_law");
    for m in [6, 10] {
        let chain = random_inhom_chain(&mut rng_from_seed(1), m, 1, false, 0.5).unwrap();
        let s = Mask::from_indices(0..m / 2);
        group.bench_with_input(BenchmarkId::from_parameter(m), &chain, |b, chain| b.iter(|| step_law(black_box(s), &chain.kernels()[0], chain.pi())));
    }
    group.finish();
}

criterion_group!(benches, env_sampling, exact_evolution, evolving_sets);
criterion_main!(benches);
