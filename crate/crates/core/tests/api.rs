use std::fs;
use std::io::{BufReader, BufWriter};

use dynaperc_core::dynenv::{read_env, write_env};
use dynaperc_core::envlab::{read_chain, write_chain};
use dynaperc_core::walk::{exact_quenched_distribution, walk_positions};
use dynaperc_core::{
    counterexample_chain, integral_bound_check, sample_env, tv, Dist, DynParams, Dynamics, Error, Grid, InitialCondition, Mode, TorusGraph,
};

#[test]
fn environment_dump_round_trips_through_a_file() {
    let g = TorusGraph::new(2, 4).unwrap();
    let env = sample_env(&g, DynParams::new(0.3, 0.25, 20.0).unwrap(), InitialCondition::Stationary, 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.env");
    write_env(&env, BufWriter::new(fs::File::create(&path).unwrap())).unwrap();
    let back = read_env(BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.edges(), env.edges());
    // the reloaded environment drives the walk identically
    let a = exact_quenched_distribution(&env, 0, 7.5).unwrap();
    let b = exact_quenched_distribution(&back, 0, 7.5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn chain_file_round_trip_preserves_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    write_chain(&counterexample_chain(), BufWriter::new(fs::File::create(&path).unwrap())).unwrap();
    let chain = read_chain(BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(chain.kernels(), counterexample_chain().kernels());
    assert!(matches!(integral_bound_check(&chain, 0, 0.1, Dynamics::Plain, 0), Err(Error::TheoremInapplicable(_))));
}

#[test]
fn simulated_walks_agree_with_the_exact_quenched_law() {
    let g = TorusGraph::new(1, 6).unwrap();
    let env = sample_env(&g, DynParams::new(0.5, 0.5, 6.0).unwrap(), InitialCondition::Stationary, 3).unwrap();
    let exact = exact_quenched_distribution(&env, 0, 6.0).unwrap();
    let reps = 40_000;
    let samples = (0..reps as u64).map(|s| walk_positions(&env, 0, s, &[6.0]).unwrap()[0]);
    let emp = Dist::empirical(6, samples);
    // plug-in TV over 6 cells at this sample size is below 0.02 with high probability
    assert!(tv(&emp, &exact).unwrap() < 0.02);
}

#[test]
fn exact_and_monte_carlo_mixing_times_are_close() {
    let g = TorusGraph::new(1, 6).unwrap();
    let env = sample_env(&g, DynParams::new(0.5, 0.5, 80.0).unwrap(), InitialCondition::Stationary, 9).unwrap();
    let grid = Grid::blocks(0.5, 40).unwrap();
    let exact = dynaperc_core::dist::quenched_mixing_time(&env, 0, 0.25, &grid, Mode::exact()).unwrap();
    let mc = dynaperc_core::dist::quenched_mixing_time(&env, 0, 0.25, &grid, Mode::MonteCarlo { replicas: 20_000, seed: 4 }).unwrap();
    let (e, m) = (exact.time.value().unwrap(), mc.time.value().unwrap());
    assert!((e - m).abs() <= 2.0 * grid.step(), "exact {e}, mc {m}");
}
