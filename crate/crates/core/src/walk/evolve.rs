//! Exact evolution of the quenched law through a fixed environment.
//!
//! Between consecutive flip instants the open-edge set is constant and the
//! walk is a continuous-time chain whose generator is `P − I`, where `P`
//! is the one-attempt kernel: pick one of the `2d` directions and cross the
//! edge if it is open. Total attempt rate is exactly 1, so uniformization
//! with rate 1 is exact: `e^{h(P−I)} = Σ_k e^{−h} h^k/k! · P^k`. The series
//! is truncated once a certified bound on the remaining Poisson weight
//! drops below the per-segment share of the caller's error budget.

use crate::dynenv::EnvTrajectory;
use crate::error::{invalid, Result};
use crate::subset::Membership;
use crate::torus::TorusGraph;

/// Longest piece handled by one Poisson series; keeps `e^{−h}` far from
/// underflow.
const MAX_CHUNK: f64 = 32.0;

/// Default certified total-variation truncation budget per evolution call.
pub const DEFAULT_TRUNCATION_BUDGET: f64 = 1e-10;

/// One application of the one-attempt kernel. `P` is symmetric, so the same
/// routine serves row vectors (laws) and column vectors (expectations).
#[inline]
pub(crate) fn attempt_step(g: &TorusGraph, open: &[bool], v: &[f64], out: &mut [f64]) {
    out.copy_from_slice(v);
    let inv_deg = 1.0 / g.degree() as f64;
    let plus = g.plus_table();
    let d = g.dim();
    for (e, _) in open.iter().enumerate().filter(|(_, &o)| o) {
        let (u, w) = (e / d, plus[e]);
        let f = (v[u] - v[w]) * inv_deg;
        out[u] -= f;
        out[w] += f;
    }
}

/// Flip events of an environment inside a window, shared by every
/// evolution that runs over that window.
#[derive(Debug, Clone)]
pub struct EventSchedule {
    start: f64,
    end: f64,
    initial_open: Vec<bool>,
    events: Vec<(f64, usize)>,
}

impl EventSchedule {
    pub fn new(env: &EnvTrajectory, start: f64, end: f64) -> Result<Self> {
        if start > end {
            return Err(invalid(format!("empty window [{start}, {end}]")));
        }
        env.check_time(start)?;
        env.check_time(end)?;
        Ok(Self { start, end, initial_open: env.states_at(start)?, events: env.flip_events(start, end) })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }
}

/// Incrementally advances one vector through a window.
///
/// In `Forward` mode the vector is a law (row vector). With a killing set,
/// mass that enters the set is removed, so the total mass is the survival
/// probability.
pub struct Evolver<'a> {
    graph: &'a TorusGraph,
    schedule: &'a EventSchedule,
    open: Vec<bool>,
    next_event: usize,
    time: f64,
    vec: Vec<f64>,
    scratch: Vec<f64>,
    acc: Vec<f64>,
    tol_rate: f64,
    truncation: f64,
    kill: Option<&'a dyn Membership>,
}

impl<'a> Evolver<'a> {
    pub fn new(env: &'a EnvTrajectory, schedule: &'a EventSchedule, initial: Vec<f64>) -> Self {
        Self::with_budget(env, schedule, initial, DEFAULT_TRUNCATION_BUDGET)
    }

    pub fn with_budget(env: &'a EnvTrajectory, schedule: &'a EventSchedule, initial: Vec<f64>, budget: f64) -> Self {
        let m = initial.len();
        let span = schedule.end - schedule.start;
        Self {
            graph: env.graph(),
            schedule,
            open: schedule.initial_open.clone(),
            next_event: 0,
            time: schedule.start,
            vec: initial,
            scratch: vec![0.0; m],
            acc: vec![0.0; m],
            tol_rate: if span > 0.0 { budget / span } else { budget },
            truncation: 0.0,
            kill: None,
        }
    }

    /// Removes mass entering `set` (the walker is absorbed there).
    pub fn killing(mut self, set: &'a dyn Membership) -> Self {
        for (i, v) in self.vec.iter_mut().enumerate() {
            if set.contains(i) {
                *v = 0.0;
            }
        }
        self.kill = Some(set);
        self
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn vector(&self) -> &[f64] {
        &self.vec
    }

    pub fn into_vector(self) -> Vec<f64> {
        self.vec
    }

    /// Certified upper bound on the L1 mass lost to series truncation.
    pub fn truncation_bound(&self) -> f64 {
        self.truncation
    }

    fn apply(&mut self) {
        attempt_step(self.graph, &self.open, &self.vec, &mut self.scratch);
        if let Some(k) = self.kill {
            for (i, v) in self.scratch.iter_mut().enumerate() {
                if k.contains(i) {
                    *v = 0.0;
                }
            }
        }
    }

    /// `vec ← vec · e^{h(P−I)}` for the current open set.
    fn propagate(&mut self, h: f64) {
        if h <= 0.0 {
            return;
        }
        if self.kill.is_none() && !self.open.iter().any(|&o| o) {
            return;
        }
        let mut remaining = h;
        while remaining > 0.0 {
            let step = remaining.min(MAX_CHUNK);
            remaining -= step;
            let tol = (self.tol_rate * step).max(1e-300);
            let mut w = (-step).exp();
            self.acc.iter_mut().zip(&self.vec).for_each(|(a, v)| *a = w * v);
            let mut k = 0usize;
            loop {
                // bound on Σ_{j>k} w_j, valid once the ratio h/(j+1) < 1
                let ratio = step / (k as f64 + 2.0);
                let next = w * step / (k as f64 + 1.0);
                if ratio < 1.0 && next / (1.0 - ratio) <= tol {
                    self.truncation += next / (1.0 - ratio);
                    break;
                }
                k += 1;
                w = next;
                self.apply();
                std::mem::swap(&mut self.vec, &mut self.scratch);
                self.acc.iter_mut().zip(&self.vec).for_each(|(a, v)| *a += w * v);
            }
            std::mem::swap(&mut self.vec, &mut self.acc);
        }
    }

    /// Advances to time `t` (which must not precede the current time nor
    /// exceed the schedule's end).
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.time || t > self.schedule.end {
            return Err(invalid(format!("cannot advance from {} to {t} within window ending at {}", self.time, self.schedule.end)));
        }
        while let Some(&(te, e)) = self.schedule.events.get(self.next_event) {
            if te > t {
                break;
            }
            self.propagate(te - self.time);
            self.time = te;
            self.open[e] = !self.open[e];
            self.next_event += 1;
        }
        self.propagate(t - self.time);
        self.time = t;
        Ok(())
    }
}

/// Backward sweep for killed expectations on a window `[a, b]`:
/// for every start `x` at time `a` returns
/// `(E_x[∫_a^b 1{τ_A > s} ds], P_x(τ_A > b))`.
///
/// The walk is absorbed in `target`; by symmetry of `P`, the backward
/// semigroup uses the same one-attempt operator as the forward one.
pub fn killed_occupation(env: &EnvTrajectory, schedule: &EventSchedule, target: &dyn Membership) -> (Vec<f64>, Vec<f64>, f64) {
    let g = env.graph();
    let m = g.num_vertices();
    let inside: Vec<bool> = (0..m).map(|i| target.contains(i)).collect();
    // open set at every event boundary, walking backwards
    let mut open = schedule.initial_open.clone();
    for &(_, e) in &schedule.events {
        open[e] = !open[e];
    }
    let mut occ = vec![0.0; m];
    let mut surv: Vec<f64> = inside.iter().map(|&a| if a { 0.0 } else { 1.0 }).collect();
    let span = schedule.end - schedule.start;
    let tol_rate = if span > 0.0 { DEFAULT_TRUNCATION_BUDGET / span } else { 0.0 };
    let mut truncation = 0.0;
    let mut t = schedule.end;
    let mut scratch = vec![0.0; m];
    let mut bufs = (vec![0.0; m], vec![0.0; m]);
    let mut segment = |h: f64, open: &[bool], occ: &mut Vec<f64>, surv: &mut Vec<f64>, truncation: &mut f64| {
        let mut remaining = h;
        while remaining > 0.0 {
            let step = remaining.min(MAX_CHUNK);
            remaining -= step;
            let tol = (tol_rate * step).max(1e-300);
            // occ_new = Σ_k P^k (w_k occ + q_k 1_{A^c}) restricted to A^c,
            // surv_new = Σ_k w_k P^k surv, with q_k = P(Poisson(step) > k).
            let (a_occ, a_surv) = (&mut bufs.0, &mut bufs.1);
            let mut cur_occ = occ.clone();
            let mut cur_surv = surv.clone();
            let mut cur_one: Vec<f64> = inside.iter().map(|&a| if a { 0.0 } else { 1.0 }).collect();
            let mut w = (-step).exp();
            let mut cdf = w;
            for i in 0..m {
                a_occ[i] = w * cur_occ[i] + (1.0 - cdf) * cur_one[i];
                a_surv[i] = w * cur_surv[i];
            }
            let mut k = 0usize;
            loop {
                let ratio = step / (k as f64 + 2.0);
                let next = w * step / (k as f64 + 1.0);
                if ratio < 1.0 {
                    let tail_w = next / (1.0 - ratio);
                    // Σ_{j>k} P(N > j) ≤ Σ_{j>k} (j−k) w_j ≤ w_{k+1}/(1−r)^2
                    let tail_q = next / ((1.0 - ratio) * (1.0 - ratio));
                    if tail_w <= tol && tail_q <= tol * step.max(1.0) {
                        *truncation += tail_w;
                        break;
                    }
                }
                k += 1;
                w = next;
                cdf += w;
                for v in [&mut cur_occ, &mut cur_surv, &mut cur_one] {
                    attempt_step(g, open, v, &mut scratch);
                    for (i, s) in scratch.iter().enumerate() {
                        v[i] = if inside[i] { 0.0 } else { *s };
                    }
                }
                let q = (1.0 - cdf).max(0.0);
                for i in 0..m {
                    a_occ[i] += w * cur_occ[i] + q * cur_one[i];
                    a_surv[i] += w * cur_surv[i];
                }
            }
            std::mem::swap(occ, a_occ);
            std::mem::swap(surv, a_surv);
        }
    };
    for &(te, e) in schedule.events.iter().rev() {
        segment(t - te, &open, &mut occ, &mut surv, &mut truncation);
        t = te;
        open[e] = !open[e];
    }
    segment(t - schedule.start, &open, &mut occ, &mut surv, &mut truncation);
    (occ, surv, truncation)
}
