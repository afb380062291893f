//! Wall-clock comparison of the exact solver and surrogate inference.

use std::time::{Duration, Instant};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::Model;
use crate::graph::{erdos_renyi_with, NetworkInstance};
use crate::markov::{self, mc_timing_probe, SolveOptions, TimingProbe};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub t_values: Vec<usize>,
    /// Per-solve wall-clock budget.
    pub budget_seconds: f64,
    pub p_edge: f64,
    pub seed: u64,
    /// Timed surrogate forward passes per cell; the median is reported.
    pub gnn_reps: usize,
    /// Exact solves per cell; the median is reported. Repetition stops at
    /// the first timeout or failure.
    pub mc_reps: usize,
}

impl SweepConfig {
    pub fn new(n_values: Vec<usize>, t_values: Vec<usize>, budget_seconds: f64) -> Self {
        Self { n_values, t_values, budget_seconds, p_edge: 0.5, seed: 0, gnn_reps: 21, mc_reps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// `T^n`, the size of the unrestricted timer space.
    pub full_states: Option<u64>,
    pub mc: TimingProbe,
    pub gnn_seconds: f64,
    /// `mc / gnn` when the exact solve finished.
    pub speedup: Option<f64>,
}

/// Random instance for cell `(n, T)`: `G(n, p_edge)` with `p_i ~ U(0,1)`.
pub fn sweep_instance(cfg: &SweepConfig, n: usize, t: usize) -> Result<NetworkInstance> {
    let seed = rng::derive_seed(cfg.seed, (n as u64) << 32 | t as u64);
    let g = erdos_renyi_with(n, cfg.p_edge, &mut rng::child(seed, rng::GRAPH_STREAM))?;
    let mut r = rng::child(seed, rng::PROB_STREAM);
    let p = (0..n).map(|_| r.random::<f64>()).collect();
    NetworkInstance::new(g, p, t)
}

/// Median wall time of `reps` surrogate predictions after one warm-up.
pub fn time_inference(model: &Model, inst: &NetworkInstance, reps: usize) -> Result<f64> {
    model.predict(inst)?;
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let s = Instant::now();
        std::hint::black_box(model.predict(inst)?);
        times.push(s.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn median_probe(inst: &NetworkInstance, budget: Duration, opts: &SolveOptions, reps: usize) -> TimingProbe {
    let mut done = Vec::new();
    for _ in 0..reps.max(1) {
        match mc_timing_probe(inst, budget, opts) {
            TimingProbe::Completed { seconds, state_count } => done.push((seconds, state_count)),
            other => return other,
        }
    }
    done.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (seconds, state_count) = done[done.len() / 2];
    TimingProbe::Completed { seconds, state_count }
}

/// Times both paths on one instance per `(n, T)` cell. The exact solve
/// runs without a state cap so only the budget stops it.
pub fn timing_sweep(cfg: &SweepConfig, model: &Model, mut on_row: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    if !(cfg.budget_seconds > 0.0) {
        return Err(Error::param("budget must be > 0 seconds"));
    }
    let opts = SolveOptions { state_cap: u64::MAX, ..SolveOptions::default() };
    let budget = Duration::from_secs_f64(cfg.budget_seconds);
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        for &t in &cfg.t_values {
            let inst = sweep_instance(cfg, n, t)?;
            let mc = median_probe(&inst, budget, &opts, cfg.mc_reps);
            let gnn_seconds = time_inference(model, &inst, cfg.gnn_reps)?;
            let row = SweepRow {
                n,
                t,
                full_states: markov::full_state_count(n, t),
                speedup: mc.seconds().map(|s| s / gnn_seconds),
                mc,
                gnn_seconds,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
