//! One driver per subcommand. Each builds its cells, runs them through the
//! runner and adds any grid-level rows (fits, β₀) at the end.

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use dynaperc_core::dist::{
    annealed_hitting_exact, annealed_mixing_time, convexity_gap, quenched_hitting_mc, quenched_lower_bound_experiment, quenched_mixing_time,
    quenched_mixing_time_all, Method, ResultRecord, TargetScope,
};
use dynaperc_core::dynenv::{binomial_lemma_check, write_env};
use dynaperc_core::envlab::{all_quenched_tvs, annealed_kernel, environment_profile, quenched_law, read_chain};
use dynaperc_core::evoset::{
    doob_step_law, doob_z_bound_check, lazy, marginal_identity_check, psi_phi_pair, psi_profile, psi_step_count, random_doubly_stochastic,
    random_inhom_chain, random_pi, random_reversible, step_law,
};
use dynaperc_core::expansion::{
    analytic_torus_integral, analytic_torus_profile, coordinate_boxes, family_profile, integral_mixing_bound, kernel_profile, lemma_witness_constant,
    torus_phi_lower_bound_check,
};
use dynaperc_core::rng::{derive_seed, derived_rng, rng_from_seed, Rng, Stream};
use dynaperc_core::stats::{fit_power_law, mean_estimate, median, Z95};
use dynaperc_core::walk::{simulate_walk, verify_path, walk_positions, window_kernel};
use dynaperc_core::{
    counterexample_chain, integral_bound_check, sample_env, tv, Dist, DynParams, Dynamics, Error, ExactBudget, FiniteEnvChain, Grid,
    InitialCondition, Kernel, Laziness, Mask, Mode, TorusGraph, VertexSet,
};
use rand::Rng as _;

use crate::config::{ConfigError, ExperimentConfig, ModeFlag};
use crate::runner::{finish, run_cells, torus_cells, Cell, CellOutput, Ctx, RunSummary};
use crate::CliError;

type CoreResult<T> = dynaperc_core::Result<T>;

fn method_tag(config: &ExperimentConfig) -> &'static str {
    match config.mode {
        ModeFlag::Exact => Method::Exact.tag(),
        ModeFlag::Mc => Method::MonteCarlo.tag(),
    }
}

fn core_mode(config: &ExperimentConfig, seed: u64) -> Mode {
    match config.mode {
        ModeFlag::Exact => Mode::exact(),
        ModeFlag::Mc => Mode::MonteCarlo { replicas: config.samples.replicas, seed },
    }
}

fn env_seed(ctx: &Ctx, i: usize) -> u64 {
    derive_seed(ctx.seed, Stream::Environment, i as u64)
}

fn eps_cells(config: &ExperimentConfig) -> Vec<Cell> {
    torus_cells(config).into_iter().flat_map(|c| config.grid.eps.iter().map(move |&e| c.clone().with_eps(e))).collect()
}

/// Half the torus: vertices whose first coordinate, shifted by `offset`,
/// is below `n/2`.
fn half_slab(g: &TorusGraph, offset: usize) -> VertexSet {
    let n = g.side();
    VertexSet::from_indices(g.num_vertices(), (0..g.num_vertices()).filter(|&v| (g.coords(v)[0] + offset) % n < n / 2))
}

fn iso_constant(config: &ExperimentConfig, g: &TorusGraph) -> CoreResult<f64> {
    if g.dim() == 1 {
        return Ok(2.0);
    }
    if let Some(c) = config.grid.iso_constant {
        return Ok(c);
    }
    Ok(g.iso_profile()?.value)
}

fn require_iso_constant(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let limit = dynaperc_core::torus::ISO_ENUMERATION_LIMIT;
    let too_big: Vec<String> = config
        .grid
        .d
        .iter()
        .flat_map(|&d| config.grid.n.iter().map(move |&n| (d, n)))
        .filter(|&(d, n)| d >= 2 && n.checked_pow(d as u32).is_none_or(|v| v > limit))
        .map(|(d, n)| format!("(d = {d}, n = {n})"))
        .collect();
    if too_big.is_empty() || config.grid.iso_constant.is_some() {
        Ok(())
    } else {
        Err(ConfigError(vec![format!("grid.iso_constant: required for tori with more than {limit} vertices: {}", too_big.join(", "))]))
    }
}

fn run<F>(name: &str, command: &str, config: &ExperimentConfig, cells: &[Cell], f: F) -> Result<RunSummary, CliError>
where
    F: Fn(&Cell, &Ctx) -> CoreResult<CellOutput> + Sync,
{
    let started = Instant::now();
    let results = run_cells(name, config, cells, f)?;
    Ok(finish(name, command, config, results, Vec::new(), started)?)
}

pub fn env_sim(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    run("env-sim", "env-sim", config, &torus_cells(config), |cell, ctx| {
        let g = TorusGraph::new(cell.d, cell.n)?;
        let horizon = config.grid.horizon;
        let params = DynParams::new(cell.p, cell.mu, horizon)?;
        let init = config.init_condition();
        let mut out = CellOutput::default();
        let (mut rates, mut open) = (Vec::new(), Vec::new());
        for i in 0..config.samples.envs {
            if ctx.expired() {
                out.censored = true;
                break;
            }
            let env = sample_env(&g, params, init.clone(), env_seed(ctx, i))?;
            if i == 0 {
                let dir = ctx.out_dir.join("env");
                fs::create_dir_all(&dir)?;
                let path = dir.join(format!("{}.env", cell.id));
                write_env(&env, BufWriter::new(fs::File::create(&path)?))?;
                out.files.push(path);
            }
            rates.push(env.total_flips() as f64 / (g.num_edges() as f64 * horizon));
            let states = env.states_at(horizon)?;
            open.push(states.iter().filter(|&&s| s).count() as f64 / states.len() as f64);
        }
        let p0 = match init {
            InitialCondition::AllClosed => 0.0,
            InitialCondition::AllOpen => 1.0,
            _ => cell.p,
        };
        for (stat, xs, theory) in [
            // mean flips per edge per unit time; exact only from stationarity
            ("flip_rate", &rates, (p0 == cell.p).then_some(2.0 * cell.p * (1.0 - cell.p) * cell.mu)),
            ("open_fraction_at_horizon", &open, Some(cell.p + (p0 - cell.p) * (-cell.mu * horizon).exp())),
        ] {
            let est = mean_estimate(xs);
            let ci = est.interval(Z95);
            let mut r = cell.record(stat, "mc", est.mean);
            (r.ci_lo, r.ci_hi) = (Some(ci.lo), Some(ci.hi));
            out.records.push(r);
            if let Some(t) = theory {
                out.records.push(cell.record(&format!("{stat}_theory"), "closed-form", t));
            }
        }
        out.records.push(cell.record("env_samples", "count", rates.len() as f64));
        let edges: Vec<usize> = (0..g.num_edges()).collect();
        let window = (0.0, (1.0 / cell.mu).min(horizon));
        for &sigma in &config.grid.sigma {
            let rep = binomial_lemma_check(&g, params, &edges, sigma, window, config.samples.envs, init.clone(), ctx.seed)?;
            let mut r = cell.record(&format!("edge_count_tail_sigma{sigma}"), "mc", rep.empirical);
            (r.ci_lo, r.ci_hi) = (Some(rep.ci.lo), Some(rep.ci.hi));
            out.records.push(r);
            out.records.push(cell.record(&format!("edge_count_tail_sigma{sigma}_worst_case"), "closed-form", rep.analytic_worst_case));
        }
        Ok(out)
    })
}

pub fn walk_sim(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    run("walk-sim", "walk-sim", config, &torus_cells(config), |cell, ctx| {
        let g = TorusGraph::new(cell.d, cell.n)?;
        let horizon = config.grid.horizon;
        let params = DynParams::new(cell.p, cell.mu, horizon)?;
        let times: Vec<f64> = (1..=4).map(|k| horizon * k as f64 / 4.0).collect();
        let m = g.num_vertices();
        let mut out = CellOutput::default();
        let mut positions: Vec<Vec<usize>> = vec![Vec::new(); times.len()];
        let per_env = config.samples.replicas.div_ceil(config.samples.envs);
        for i in 0..config.samples.envs {
            if ctx.expired() {
                out.censored = true;
                break;
            }
            let env = sample_env(&g, params, config.init_condition(), env_seed(ctx, i))?;
            let path = simulate_walk(&env, 0, horizon, derive_seed(ctx.seed, Stream::Walk, (i * per_env) as u64), &[])?;
            out.assert(format!("path-legal-env{i}"), verify_path(&env, &path).is_ok());
            for r in 0..per_env {
                let pos = walk_positions(&env, 0, derive_seed(ctx.seed, Stream::Walk, (i * per_env + r) as u64), &times)?;
                positions.iter_mut().zip(pos).for_each(|(v, x)| v.push(x));
            }
        }
        let walks = positions[0].len();
        if walks == 0 {
            return Ok(out);
        }
        let bias = dynaperc_core::dist::plug_in_bias_bound(m, walks);
        for (t, pos) in times.iter().zip(&positions) {
            let emp = Dist::empirical(m, pos.iter().copied());
            let raw = tv(&emp, &Dist::uniform(m))?;
            let mut r = cell.record(&format!("annealed_tv_at_{t}"), "mc", (raw - bias).max(0.0));
            r.x = Some(0);
            (r.ci_lo, r.ci_hi) = (Some((raw - bias).max(0.0)), Some(raw));
            out.records.push(r);
        }
        out.records.push(cell.record("walks", "count", walks as f64));
        Ok(out)
    })
}

fn mixing_grid(config: &ExperimentConfig, cell: &Cell) -> CoreResult<Grid> {
    let blocks = if config.grid.horizon_blocks > 0 { config.grid.horizon_blocks } else { 2 * cell.n * cell.n };
    Grid::blocks(cell.mu, blocks)
}

/// Quenched mixing times over environments: exact `max_x` or Monte Carlo
/// from vertex 0. Returns the per-environment records and the times.
fn quenched_times(config: &ExperimentConfig, cell: &Cell, ctx: &Ctx, out: &mut CellOutput) -> CoreResult<Vec<f64>> {
    let g = TorusGraph::new(cell.d, cell.n)?;
    let eps = cell.eps.expect("mixing cells carry eps");
    let grid = mixing_grid(config, cell)?;
    let params = DynParams::new(cell.p, cell.mu, grid.horizon())?;
    let mut times = Vec::new();
    for i in 0..config.samples.envs {
        if ctx.expired() {
            out.censored = true;
            break;
        }
        let seed = env_seed(ctx, i);
        let env = sample_env(&g, params, InitialCondition::Stationary, seed)?;
        let (t, x) = match config.mode {
            ModeFlag::Exact => (quenched_mixing_time_all(&env, eps, &grid, ExactBudget::default())?, None),
            ModeFlag::Mc => {
                (quenched_mixing_time(&env, 0, eps, &grid, core_mode(config, derive_seed(ctx.seed, Stream::Walk, i as u64)))?.time, Some(0))
            }
        };
        let mut r = cell.record("quenched_tmix", method_tag(config), t.as_f64());
        r.env_seed = Some(seed);
        r.x = x;
        r.censored_frac = Some(if t.value().is_none() { 1.0 } else { 0.0 });
        out.records.push(r);
        times.push(t.as_f64());
    }
    if !times.is_empty() {
        let mut r = cell.record("quenched_tmix_median", method_tag(config), median(&times));
        r.censored_frac = Some(times.iter().filter(|t| !t.is_finite()).count() as f64 / times.len() as f64);
        out.records.push(r);
    }
    Ok(times)
}

pub fn mix(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    run("mix", "mix", config, &eps_cells(config), |cell, ctx| {
        let mut out = CellOutput::default();
        quenched_times(config, cell, ctx, &mut out)?;
        if ctx.expired() {
            out.censored = true;
            return Ok(out);
        }
        let g = TorusGraph::new(cell.d, cell.n)?;
        let grid = mixing_grid(config, cell)?;
        let params = DynParams::new(cell.p, cell.mu, grid.horizon())?;
        let eps = cell.eps.expect("mixing cells carry eps");
        let a = annealed_mixing_time(
            &g,
            params,
            0,
            eps,
            &grid,
            config.samples.envs,
            ctx.seed,
            core_mode(config, derive_seed(ctx.seed, Stream::Walk, 1 << 32)),
        )?;
        let mut r = cell.record("annealed_tmix", a.method.tag(), a.time.as_f64());
        r.x = Some(0);
        (r.ci_lo, r.ci_hi) = (Some(a.ci.0.as_f64()), Some(a.ci.1.as_f64()));
        r.ci_lo = r.ci_lo.filter(|v| v.is_finite());
        r.ci_hi = r.ci_hi.filter(|v| v.is_finite());
        out.records.push(r);
        if let Some(gap) = convexity_gap(&a) {
            out.records.push(cell.record("convexity_gap", "exact", gap));
            out.assert("annealed-tv-below-mean-quenched-tv", gap <= 1e-12);
        }
        Ok(out)
    })
}

fn hitting_cells(config: &ExperimentConfig, cell: &Cell, ctx: &Ctx) -> CoreResult<CellOutput> {
    let g = TorusGraph::new(cell.d, cell.n)?;
    let mut out = CellOutput::default();
    let offset = rng_from_seed(ctx.seed).random_range(0..cell.n);
    let target = half_slab(&g, offset);
    let scale = (cell.n * cell.n) as f64 / cell.mu;
    let params = DynParams::new(cell.p, cell.mu, config.grid.hitting_factor * scale)?;
    let (value, x, censored, ci) = match config.mode {
        ModeFlag::Exact => {
            let h = annealed_hitting_exact(
                &g,
                params,
                &target,
                TargetScope::HalfVolume,
                InitialCondition::Stationary,
                config.samples.envs,
                ctx.seed,
                ExactBudget::default(),
            )?;
            let s = h.per_start[h.max_start];
            (h.max_mean, h.max_start, s.censored_frac, (s.mean - Z95 * s.std_err, s.mean + Z95 * s.std_err))
        }
        ModeFlag::Mc => {
            // start in the middle of the complement, the farthest layer
            let far = (0..g.num_vertices()).find(|&v| (g.coords(v)[0] + offset) % cell.n == (3 * cell.n) / 4).unwrap_or(0);
            let per_env = config.samples.replicas.div_ceil(config.samples.envs);
            let mut means = Vec::new();
            let mut cens = 0.0;
            for i in 0..config.samples.envs {
                if ctx.expired() {
                    out.censored = true;
                    break;
                }
                let env = sample_env(&g, params, InitialCondition::Stationary, env_seed(ctx, i))?;
                let h = quenched_hitting_mc(&env, far, &target, TargetScope::HalfVolume, per_env, derive_seed(ctx.seed, Stream::Walk, i as u64))?;
                means.push(h.mean);
                cens += h.censored_frac;
            }
            let est = mean_estimate(&means);
            let ci = est.interval(Z95);
            (est.mean, far, cens / means.len().max(1) as f64, (ci.lo, ci.hi))
        }
    };
    let mut r = cell.record("max_annealed_hitting_time", method_tag(config), value);
    r.x = Some(x);
    r.censored_frac = Some(censored);
    (r.ci_lo, r.ci_hi) = (Some(ci.0), Some(ci.1));
    out.records.push(r);
    out.records.push(cell.record("hitting_time_over_n2_inv_mu", method_tag(config), value / scale));
    out.records.push(cell.record("target_offset", "seeded", offset as f64));
    Ok(out)
}

pub fn hit(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    run("hit", "hit", config, &torus_cells(config), |cell, ctx| hitting_cells(config, cell, ctx))
}

pub fn evoset(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let cells: Vec<Cell> = config.grid.states.iter().map(|&m| Cell::named(format!("m{m}"), m)).collect();
    run("evoset", "evoset", config, &cells, |cell, ctx| {
        let m = cell.n;
        let mut rng = derived_rng(ctx.seed, Stream::Instance, 0);
        let mut out = CellOutput::default();
        let (mut mart, mut doob, mut dual, mut marg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut psi_violations = 0usize;
        let mut done = 0;
        for trial in 0..config.samples.chains {
            if ctx.expired() {
                out.censored = true;
                break;
            }
            let alpha = if trial % 4 == 0 { 0.0 } else { rng.random_range(0.05..0.9) };
            let chain = random_inhom_chain(&mut rng, m, 6, trial % 2 == 0, alpha)?;
            let (pi, k) = (chain.pi(), &chain.kernels()[0]);
            for bits in 1..(1u64 << m) {
                let s = Mask(bits);
                let law = step_law(s, k, pi);
                mart = mart.max((law.expect(|t| t.mass(pi)) - s.mass(pi)).abs());
                doob = doob.max((doob_step_law(s, k, pi)?.total() - 1.0).abs());
                dual = dual.max(step_law(s.complement(m), k, pi).max_abs_diff(&law.complemented(m)));
                let (psi, rhs) = psi_phi_pair(s, k, pi)?;
                psi_violations += usize::from(psi < rhs - 1e-12);
            }
            marg = marg.max(marginal_identity_check(&chain, trial % m, 6)?.max_error);
            done += 1;
        }
        for (stat, v, ok) in [
            ("martingale_error", mart, mart <= 1e-12),
            ("doob_normalisation_error", doob, doob <= 1e-12),
            ("complement_duality_error", dual, dual <= 1e-12),
            ("psi_violations", psi_violations as f64, psi_violations == 0),
            ("marginal_identity_error", marg, marg <= 1e-9),
        ] {
            out.records.push(cell.record(stat, "exact", v));
            out.assert(stat, ok);
        }
        out.records.push(cell.record("chains", "count", done as f64));

        // Z-process bounds on lazy instances; exact propagation is kept to
        // small state spaces
        if m <= 6 {
            let eps = config.grid.eps.first().copied().unwrap_or(0.25);
            let (mut violations, mut instances, mut skipped) = (0, 0, 0);
            while instances < config.samples.chains.min(50) && !ctx.expired() {
                let pi = random_pi(&mut rng, m, 0.5);
                let pool: Vec<Kernel> = (0..3).map(|_| lazy(&random_reversible(&mut rng, &pi), 0.5)).collect();
                let refs: Vec<&Kernel> = pool.iter().collect();
                let steps = match psi_step_count(&psi_profile(&refs, &pi)?, pi[0], eps) {
                    Ok(s) => s as usize,
                    Err(Error::DivergentIntegral(_)) => {
                        skipped += 1;
                        if skipped > 1000 {
                            break;
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let kernels = (0..steps.max(1)).map(|_| pool[rng.random_range(0..3)].clone()).collect();
                let chain = dynaperc_core::InhomChain::new(pi, kernels)?;
                let r = doob_z_bound_check(&chain, 0, steps.max(1), eps)?;
                violations += usize::from(!(r.chi_ok && r.z_ok));
                instances += 1;
            }
            out.records.push(cell.record("z_bound_violations", "exact", violations as f64));
            out.records.push(cell.record("z_bound_instances", "count", instances as f64));
            out.assert("z_bound_violations", violations == 0);
        }
        Ok(out)
    })
}

pub fn expansion(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    require_iso_constant(config)?;
    run("expansion", "expansion", config, &torus_cells(config), |cell, ctx| {
        let g = TorusGraph::new(cell.d, cell.n)?;
        let m = g.num_vertices();
        let iso = iso_constant(config, &g)?;
        let c = lemma_witness_constant(cell.d, iso);
        let s = half_slab(&g, 0);
        let mut out = CellOutput::default();
        out.records.push(cell.record(
            "iso_constant",
            if config.grid.iso_constant.is_some() && cell.d > 1 { "configured" } else { "exact-enumerated" },
            iso,
        ));
        out.records.push(cell.record("witness_c", "closed-form", c));
        let params = DynParams::new(cell.p, cell.mu, 1.0)?;
        let (mut violations, mut min_ratio, mut betas, mut exact) = (0, f64::INFINITY, Vec::new(), true);
        let mut first_env = None;
        for i in 0..config.samples.envs {
            if ctx.expired() {
                out.censored = true;
                break;
            }
            let env = sample_env(&g, params, InitialCondition::Stationary, env_seed(ctx, i))?;
            let r = torus_phi_lower_bound_check(
                &env,
                &s,
                0.0,
                c,
                ExactBudget::default(),
                config.samples.replicas,
                derive_seed(ctx.seed, Stream::Walk, i as u64),
            )?;
            violations += usize::from(!r.pass);
            min_ratio = min_ratio.min(r.ratio);
            betas.push(r.beta);
            exact &= r.exact;
            first_env.get_or_insert(env);
        }
        let method = if exact { "exact" } else { "mc" };
        out.records.push(cell.record("lemma_violations", method, violations as f64));
        out.records.push(cell.record("lemma_min_ratio", method, min_ratio));
        out.records.push(cell.record("mean_open_boundary_fraction", "mc", mean_estimate(&betas).mean));
        out.assert("torus-expansion-lower-bound", violations == 0);

        if let Some(env) = first_env.filter(|_| m <= 16) {
            let k = window_kernel(&env, 0.0, 1.0, Laziness::Plain)?.kernel;
            let pi = vec![1.0 / m as f64; m];
            let certified = kernel_profile(&k, &pi)?;
            out.records.push(cell.record("unit_window_phi_at_half", certified.provenance().tag(), certified.profile().eval(0.5)));
            let diag = family_profile(&k, &pi, &coordinate_boxes(&g), "coordinate-boxes")?;
            out.records.push(cell.record("unit_window_phi_at_half", diag.provenance().tag(), diag.profile().eval(0.5)));
        }
        Ok(out)
    })
}

fn torus_bound_rows(config: &ExperimentConfig, cell: &Cell) -> CoreResult<CellOutput> {
    let g = TorusGraph::new(cell.d, cell.n)?;
    let eps = cell.eps.expect("bound cells carry eps");
    let c = lemma_witness_constant(cell.d, iso_constant(config, &g)?);
    let mut out = CellOutput::default();
    let closed = analytic_torus_integral(c, cell.mu, cell.n, cell.d, eps)?;
    let profile = analytic_torus_profile(c, cell.mu, cell.n, cell.d)?;
    let nd = g.num_vertices() as f64;
    let stepped = profile.profile().integral(4.0 / nd, 4.0 / eps, 2)?;
    // unit windows have diagonal at least 1/e
    let blocks = integral_mixing_bound(&profile, (-1.0f64).exp(), 1.0 / nd, eps)?;
    let shape = (cell.n as f64 / (cell.mu * cell.mu)).powi(2) * (1.0 / eps).ln();
    out.records.push(cell.record("profile_integral_closed_form", "closed-form", closed));
    out.records.push(cell.record("profile_integral_stepped", profile.provenance().tag(), stepped));
    out.records.push(cell.record("mixing_bound_unit_windows", profile.provenance().tag(), blocks as f64));
    out.records.push(cell.record("integral_over_shape", "closed-form", closed / shape));
    out.assert("stepped-profile-brackets-closed-form", stepped >= closed * (1.0 - 1e-12));
    Ok(out)
}

fn chain_cells(chain: &FiniteEnvChain, config: &ExperimentConfig, label: &str) -> Vec<Cell> {
    let mut cells = Vec::new();
    for dynamics in [Dynamics::Plain, Dynamics::LazyCoupled] {
        for &eps in &config.grid.eps {
            let tag = match dynamics {
                Dynamics::Plain => "plain",
                Dynamics::LazyCoupled => "lazy",
            };
            let mut c = Cell::named(format!("{label}-{tag}-eps{eps}"), chain.size());
            c.eps = Some(eps);
            c.beta = Some(if dynamics == Dynamics::Plain { 0.0 } else { 1.0 });
            cells.push(c);
        }
    }
    cells
}

/// Integral-bound tail check on a finite-environment chain from every start.
fn chain_bound_rows(chain: &FiniteEnvChain, cell: &Cell, seed: u64) -> CoreResult<CellOutput> {
    let dynamics = if cell.beta == Some(0.0) { Dynamics::Plain } else { Dynamics::LazyCoupled };
    let eps = cell.eps.expect("chain cells carry eps");
    let mut out = CellOutput::default();
    for x in 0..chain.size() {
        match integral_bound_check(chain, x, eps, dynamics, seed) {
            Ok(r) => {
                let mut rec = cell.record("worst_tail", r.method.tag(), r.worst_tail);
                rec.x = Some(x);
                out.records.push(rec);
                let mut rec = cell.record("steps", "closed-form", r.steps as f64);
                rec.x = Some(x);
                out.records.push(rec);
                out.assert(format!("tail-below-threshold-x{x}"), r.pass);
            }
            Err(Error::TheoremInapplicable(_) | Error::DivergentIntegral(_)) => {
                log::info!("{}: no finite bound from x = {x}", cell.id);
                let mut rec = cell.record("bound_finite", "exact", 0.0);
                rec.x = Some(x);
                out.records.push(rec);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn bound(config: &ExperimentConfig, chain_path: Option<&Path>) -> Result<RunSummary, CliError> {
    if let Some(path) = chain_path {
        let chain = load_chain(path)?;
        let cells = chain_cells(&chain, config, "chain");
        return run("bound", "bound", config, &cells, |cell, ctx| chain_bound_rows(&chain, cell, ctx.seed));
    }
    require_iso_constant(config)?;
    run("bound", "bound", config, &eps_cells(config), |cell, _| torus_bound_rows(config, cell))
}

fn load_chain(path: &Path) -> Result<FiniteEnvChain, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(ConfigError(vec![format!("--chain {}: {e}", path.display())])))?;
    read_chain(std::io::BufReader::new(file)).map_err(|e| CliError::Config(ConfigError(vec![format!("--chain {}: {e}", path.display())])))
}

fn random_r(rng: &mut Rng, e: usize) -> CoreResult<Kernel> {
    let rows: Vec<Vec<f64>> = (0..e)
        .map(|_| {
            let w: Vec<f64> = (0..e).map(|_| rng.random::<f64>() + 0.05).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    Kernel::from_rows(&rows)
}

/// A random lazy chain whose environment profiles are positive under both
/// dynamics, so the integral bound is finite.
fn random_finite_env_chain(rng: &mut Rng) -> CoreResult<FiniteEnvChain> {
    loop {
        let e = rng.random_range(2..=3);
        let m = rng.random_range(2..=4);
        let alpha = rng.random_range(0.2..0.6);
        let reversible = rng.random_bool(0.5);
        let pi = if reversible { random_pi(rng, m, 0.5) } else { vec![1.0 / m as f64; m] };
        let kernels =
            (0..e).map(|_| lazy(&if reversible { random_reversible(rng, &pi) } else { random_doubly_stochastic(rng, m, 3) }, alpha)).collect();
        let chain = FiniteEnvChain::new(random_r(rng, e)?, kernels, pi)?;
        let finite = [Dynamics::Plain, Dynamics::LazyCoupled]
            .iter()
            .all(|&d| environment_profile(&chain, d).is_ok_and(|p| p.profile().values().iter().all(|&v| v > 0.0)));
        if finite {
            return Ok(chain);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LabScenario {
    /// Two states, two environments: annealed mixing in one step, quenched never.
    Counterexample,
    /// Random lazy chains through the integral-bound tail check.
    Random,
    /// Annealed vs quenched laws of the chain given by `--chain`.
    Chain,
}

pub fn lab(config: &ExperimentConfig, scenario: LabScenario, chain_path: Option<&Path>) -> Result<RunSummary, CliError> {
    match scenario {
        LabScenario::Counterexample => {
            let cells = [Cell::named("counterexample", 2)];
            run("lab-counterexample", "lab", config, &cells, |cell, ctx| {
                let chain = counterexample_chain();
                let mut out = CellOutput::default();
                let a = annealed_kernel(&chain)?;
                let u = Dist::uniform(2);
                let mut annealed = 0.0f64;
                for z0 in 0..2 {
                    for x0 in 0..2 {
                        annealed = annealed.max(tv(&a.walk_marginal(z0, x0, 1), &u)?);
                    }
                }
                out.records.push(cell.record("annealed_tv_after_one_step", "exact", annealed));
                out.assert("annealed-tv-zero", annealed == 0.0);
                let mut rng = derived_rng(ctx.seed, Stream::Environment, 0);
                let (mut half, mut total) = (0, 0);
                for _ in 0..config.samples.paths {
                    let len = rng.random_range(1..=12);
                    let mut z = rng.random_range(0..2);
                    let path: Vec<usize> = (0..len)
                        .map(|_| {
                            z = usize::from(rng.random::<f64>() >= chain.r().row(z)[0]);
                            z
                        })
                        .collect();
                    half += usize::from(tv(&quenched_law(&chain, &path, rng.random_range(0..2))?, &u)? == 0.5);
                    total += 1;
                }
                out.records.push(cell.record("quenched_tv_half_fraction", "exact", half as f64 / total.max(1) as f64));
                out.assert("quenched-tv-half", half == total);
                let applicable = integral_bound_check(&chain, 0, 0.1, Dynamics::Plain, ctx.seed).is_ok();
                out.records.push(cell.record("integral_bound_applicable", "exact", f64::from(u8::from(applicable))));
                Ok(out)
            })
        }
        LabScenario::Random => {
            let mut rng = rng_from_seed(config.seed);
            let chains: Vec<FiniteEnvChain> = (0..config.samples.chains).map(|_| random_finite_env_chain(&mut rng)).collect::<CoreResult<_>>()?;
            let cells: Vec<(usize, Cell)> = chains
                .iter()
                .enumerate()
                .flat_map(|(i, c)| chain_cells(c, config, &format!("chain{i}")).into_iter().map(move |cell| (i, cell)))
                .collect();
            let plain: Vec<Cell> = cells.iter().map(|(_, c)| c.clone()).collect();
            run("lab-random", "lab", config, &plain, |cell, ctx| {
                let idx = cells.iter().find(|(_, c)| c.id == cell.id).map(|(i, _)| *i).expect("cell from this run");
                chain_bound_rows(&chains[idx], cell, ctx.seed)
            })
        }
        LabScenario::Chain => {
            let path = chain_path.ok_or_else(|| CliError::Config(ConfigError(vec!["--chain: required by --scenario chain".into()])))?;
            let chain = load_chain(path)?;
            let cells = [Cell::named("chain", chain.size())];
            run("lab-chain", "lab", config, &cells, |cell, _| {
                let a = annealed_kernel(&chain)?;
                let pi = Dist::new(chain.pi().to_vec())?;
                let mut out = CellOutput::default();
                let mut convex = true;
                for k in 0..=8 {
                    let (mut annealed, mut mean_quenched) = (0.0f64, 0.0f64);
                    for z0 in 0..chain.num_envs() {
                        let t = tv(&a.walk_marginal(z0, 0, k), &pi)?;
                        let q: f64 = all_quenched_tvs(&chain, z0, 0, k)?.iter().map(|(w, t)| w * t).sum();
                        convex &= t <= q + 1e-12;
                        annealed = annealed.max(t);
                        mean_quenched = mean_quenched.max(q);
                    }
                    out.records.push(cell.record(&format!("annealed_tv_step{k}"), "exact", annealed));
                    out.records.push(cell.record(&format!("mean_quenched_tv_step{k}"), "exact", mean_quenched));
                }
                out.assert("annealed-tv-below-mean-quenched-tv", convex);
                Ok(out)
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepScenario {
    /// Median quenched mixing time over the (n, μ) grid, with a power-law fit.
    SubcriticalMixing,
    /// Worst-start annealed hitting time of a half-volume target, with a fit.
    Hitting,
    /// Quenched TV at βn²/μ, isolated-vertex frequency and β₀.
    LowerBound,
    /// Closed-form profile integral over the grid, with a fit.
    IntegralShape,
}

impl SweepScenario {
    pub fn name(self) -> &'static str {
        match self {
            SweepScenario::SubcriticalMixing => "subcritical-mixing",
            SweepScenario::Hitting => "hitting",
            SweepScenario::LowerBound => "lower-bound",
            SweepScenario::IntegralShape => "integral-shape",
        }
    }

    /// Default configuration: the desk-scale grids of the scaling checks.
    pub fn defaults(self) -> ExperimentConfig {
        let mut c = ExperimentConfig { scenario: self.name().into(), ..ExperimentConfig::default() };
        c.grid.n = vec![8, 16, 32];
        c.grid.mu = vec![0.5, 0.125];
        c.samples.envs = 30;
        match self {
            SweepScenario::SubcriticalMixing | SweepScenario::Hitting => {}
            SweepScenario::LowerBound => {
                c.grid.n = vec![16];
                c.grid.mu = vec![0.125];
                c.grid.beta = vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 0.01, 0.02, 0.05, 0.1];
            }
            SweepScenario::IntegralShape => {
                c.grid.d = vec![1, 2];
                c.grid.n = vec![8, 16, 32, 64];
                c.grid.eps = vec![0.04, 0.25];
                // enumerated on the 4×4 torus
                c.grid.iso_constant = Some(2.0 * std::f64::consts::SQRT_2);
            }
        }
        c
    }
}

fn fit_rows(name: &str, records: &[ResultRecord], statistic: &str) -> Vec<ResultRecord> {
    let cells: Vec<(f64, f64, f64)> =
        records.iter().filter(|r| r.statistic == statistic).filter_map(|r| r.value.filter(|v| *v > 0.0).map(|v| (r.n as f64, r.mu, v))).collect();
    let mut rows = Vec::new();
    let fit = (cells.len() >= 3).then(|| fit_power_law(&cells)).flatten();
    for (stat, v) in
        [("fit_n_exponent", fit.map(|f| f.n_exponent)), ("fit_inv_mu_exponent", fit.map(|f| f.inv_mu_exponent)), ("fit_log_c", fit.map(|f| f.log_c))]
    {
        let mut r = ResultRecord::new(format!("{name}-fit"), 0, 0, 0.0, 0.0, stat, "least-squares");
        r.value = v;
        rows.push(r);
    }
    rows
}

pub fn sweep(config: &ExperimentConfig, scenario: SweepScenario) -> Result<RunSummary, CliError> {
    let name = format!("sweep-{}", scenario.name());
    let started = Instant::now();
    let (results, extra) = match scenario {
        SweepScenario::SubcriticalMixing => {
            let results = run_cells(&name, config, &eps_cells(config), |cell, ctx| {
                let mut out = CellOutput::default();
                quenched_times(config, cell, ctx, &mut out)?;
                Ok(out)
            })?;
            let extra = fit_rows(&name, &results.records, "quenched_tmix_median");
            (results, extra)
        }
        SweepScenario::Hitting => {
            let results = run_cells(&name, config, &torus_cells(config), |cell, ctx| hitting_cells(config, cell, ctx))?;
            let extra = fit_rows(&name, &results.records, "max_annealed_hitting_time");
            (results, extra)
        }
        SweepScenario::LowerBound => {
            let cells: Vec<Cell> =
                torus_cells(config).into_iter().flat_map(|c| config.grid.beta.iter().map(move |&b| c.clone().with_beta(b))).collect();
            let results = run_cells(&name, config, &cells, |cell, ctx| {
                let g = TorusGraph::new(cell.d, cell.n)?;
                let beta = cell.beta.expect("lower-bound cells carry beta");
                let tv_samples = if g.num_vertices() <= ExactBudget::default().0 { config.samples.envs } else { 0 };
                let r = quenched_lower_bound_experiment(
                    &g,
                    cell.p,
                    cell.mu,
                    beta,
                    0.5,
                    2.0,
                    tv_samples,
                    config.samples.envs,
                    ctx.seed,
                    ExactBudget::default(),
                )?;
                let mut out = CellOutput::default();
                let mut rec = cell.record("mean_quenched_tv", "exact", r.mean_tv);
                rec.x = Some(0);
                out.records.push(rec);
                out.records.push(cell.record("frac_far_from_one", "exact", r.frac_far_from_one));
                let mut rec = cell.record("isolated_vertex_frequency", "mc", r.isolated_frequency);
                (rec.ci_lo, rec.ci_hi) = (Some(r.isolated_ci.lo), Some(r.isolated_ci.hi));
                out.records.push(rec);
                out.assert("markov-inequality", r.markov_holds);
                Ok(out)
            })?;
            let extra = beta_zero_rows(&name, config, &results.records);
            (results, extra)
        }
        SweepScenario::IntegralShape => {
            require_iso_constant(config)?;
            let results = run_cells(&name, config, &eps_cells(config), |cell, _| torus_bound_rows(config, cell))?;
            let mut extra = Vec::new();
            for &d in &config.grid.d {
                for &eps in &config.grid.eps {
                    let subset: Vec<ResultRecord> = results.records.iter().filter(|r| r.d == d && r.eps == Some(eps)).cloned().collect();
                    let mut rows = fit_rows(&format!("{name}-d{d}-eps{eps}"), &subset, "profile_integral_closed_form");
                    rows.iter_mut().for_each(|r| {
                        r.d = d;
                        r.eps = Some(eps);
                    });
                    extra.extend(rows);
                }
            }
            (results, extra)
        }
    };
    Ok(finish(&name, "sweep", config, results, extra, started)?)
}

/// `β₀` per torus: the largest β (ascending) such that it and every smaller
/// β have mean quenched TV at least `0.9 (1 − 1/n^d)`.
fn beta_zero_rows(name: &str, config: &ExperimentConfig, records: &[ResultRecord]) -> Vec<ResultRecord> {
    let mut betas = config.grid.beta.clone();
    betas.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for cell in torus_cells(config) {
        let level = 0.9 * (1.0 - (cell.n as f64).powi(-(cell.d as i32)));
        let mut best = None;
        for &b in &betas {
            let id = cell.clone().with_beta(b).id;
            match records.iter().find(|r| r.cell_id == id && r.statistic == "mean_quenched_tv").and_then(|r| r.value) {
                Some(v) if v >= level => best = Some(b),
                _ => break,
            }
        }
        let mut r = cell.record("beta_zero", "scan", best.unwrap_or(f64::NAN));
        r.cell_id = format!("{name}-{}", cell.id);
        rows.push(r);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_slab_is_half_the_torus_for_every_offset() {
        let g = TorusGraph::new(2, 6).unwrap();
        for off in 0..6 {
            assert_eq!(half_slab(&g, off).len(), 18);
        }
        assert_ne!(half_slab(&g, 0), half_slab(&g, 1));
    }

    #[test]
    fn beta_zero_stops_at_the_first_miss() {
        let mut c = ExperimentConfig::default();
        c.grid.n = vec![4];
        c.grid.beta = vec![0.3, 0.1, 0.2];
        let cell = torus_cells(&c).remove(0);
        // level 0.9 · 15/16 = 0.84375
        let recs: Vec<ResultRecord> =
            [(0.1, 0.9), (0.2, 0.85), (0.3, 0.5)].iter().map(|&(b, v)| cell.clone().with_beta(b).record("mean_quenched_tv", "exact", v)).collect();
        let rows = beta_zero_rows("s", &c, &recs);
        assert_eq!(rows[0].value, Some(0.2));
        let rows = beta_zero_rows("s", &c, &recs[1..]);
        assert_eq!(rows[0].value, None);
    }

    #[test]
    fn fit_rows_recover_an_exact_power_law() {
        let mut recs = Vec::new();
        for n in [4usize, 8, 16] {
            for mu in [0.5, 0.25] {
                let cell = Cell::new(1, n, 0.5, mu);
                recs.push(cell.record("t", "exact", 3.0 * (n * n) as f64 / mu));
            }
        }
        let rows = fit_rows("s", &recs, "t");
        assert!((rows[0].value.unwrap() - 2.0).abs() < 1e-9);
        assert!((rows[1].value.unwrap() - 1.0).abs() < 1e-9);
        assert!((rows[2].value.unwrap() - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn too_few_cells_give_an_empty_fit() {
        let recs = vec![Cell::new(1, 4, 0.5, 0.5).record("t", "exact", 1.0)];
        assert!(fit_rows("s", &recs, "t").iter().all(|r| r.value.is_none()));
    }
}
