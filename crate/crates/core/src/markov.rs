//! Exact saturation throughput from the residual-timer Markov chain.
//!
//! The chain state is the vector of residual timers `a ∈ {0..T-1}^n`.
//! Only states reachable from the all-zero vector are enumerated
//! (breadth-first, so index 0 is the all-zero state and indices follow
//! discovery order). Each row of the kernel is obtained by enumerating
//! the attempt patterns of the eligible set; the stationary distribution
//! comes from power iteration on `Pᵀ`, and per-node throughput is
//! `T · Σ_s π_s · r_i(s)` where `r_i(s)` is the probability that node `i`
//! starts a collision-free transmission in state `s`:
//!
//! ```text
//! r_i(s) = p_i · Π_{j ∈ N(i) ∩ E(s)} (1 - p_j)   if i ∈ E(s), else 0
//! ```

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CollisionMode, ConflictGraph, NetworkInstance};

pub type State = Vec<u16>;

/// Default cap on the full state-space size `T^n`.
pub const DEFAULT_STATE_CAP: u64 = 10_000_000;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
/// Weight on `Pᵀ` in the lazy iteration used for periodic chains.
pub const DAMPING: f64 = 0.999;
/// The lazy iteration is used when the all-zero state's self-loop is
/// below this; such chains are periodic or close to it.
pub const NEAR_PERIODIC: f64 = 1e-3;
const MAX_ELIGIBLE: usize = 40;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub mode: CollisionMode,
    pub state_cap: u64,
    pub tol: f64,
    pub max_iters: usize,
    pub deadline: Option<Instant>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mode: CollisionMode::TimerRule,
            state_cap: DEFAULT_STATE_CAP,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            deadline: None,
        }
    }
}

impl SolveOptions {
    pub fn with_mode(mut self, mode: CollisionMode) -> Self {
        self.mode = mode;
        self
    }

    fn check_deadline(&self, started: Instant) -> Result<()> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(Error::Timeout(started.elapsed().as_secs_f64())),
            _ => Ok(()),
        }
    }
}

/// Nodes that may attempt in `state`: idle, with every neighbor idle.
pub fn eligible_set(state: &[u16], g: &ConflictGraph) -> Vec<usize> {
    let nbrs = g.neighbor_lists();
    (0..state.len())
        .filter(|&i| state[i] == 0 && nbrs[i].iter().all(|&j| state[j] == 0))
        .collect()
}

/// `T^n`, or `None` on overflow.
pub fn full_state_count(n: usize, t: usize) -> Option<u64> {
    (t as u64).checked_pow(u32::try_from(n).ok()?)
}

/// Checks that `T^n` fits under `cap`.
pub fn check_state_cap(n: usize, t: usize, cap: u64) -> Result<u64> {
    match full_state_count(n, t) {
        Some(c) if c <= cap => Ok(c),
        Some(c) => Err(Error::Resource(format!(
            "state space T^n = {t}^{n} = {c} exceeds the cap of {cap} states"
        ))),
        None => Err(Error::Resource(format!(
            "state space T^n = {t}^{n} overflows 64 bits (cap {cap})"
        ))),
    }
}

/// Precomputed per-instance data for row construction.
struct RowBuilder<'a> {
    inst: &'a NetworkInstance,
    mode: CollisionMode,
    radix: Vec<u64>,
    nbr_mask: Vec<u64>,
    reset: u16,
}

impl<'a> RowBuilder<'a> {
    fn new(inst: &'a NetworkInstance, mode: CollisionMode) -> Result<Self> {
        let v = inst.validate();
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let n = inst.n();
        if n > 64 {
            return Err(Error::Resource(format!("exact solver supports at most 64 nodes, got {n}")));
        }
        let t = inst.t as u64;
        let radix = (0..n).map(|i| t.pow(i as u32)).collect();
        let nbr_mask = inst
            .graph
            .neighbor_lists()
            .iter()
            .map(|ns| ns.iter().fold(0u64, |m, &j| m | (1 << j)))
            .collect();
        let reset = u16::try_from(inst.t - 1).map_err(|_| Error::param("T too large"))?;
        Ok(Self { inst, mode, radix, nbr_mask, reset })
    }

    fn encode(&self, state: &[u16]) -> u64 {
        state.iter().zip(&self.radix).map(|(&a, &r)| a as u64 * r).sum()
    }

    fn decode(&self, mut code: u64, out: &mut State) {
        let t = self.inst.t as u64;
        out.clear();
        for _ in 0..self.inst.n() {
            out.push((code % t) as u16);
            code /= t;
        }
    }

    /// Sparse row as (next code, probability), sorted by code, plus the
    /// success-start reward of every node.
    fn row(&self, state: &[u16], rewards: &mut Vec<f64>) -> Result<Vec<(u64, f64)>> {
        let p = &self.inst.p;
        let n = state.len();
        let elig = eligible_set(state, &self.inst.graph);
        if elig.len() > MAX_ELIGIBLE {
            return Err(Error::Resource(format!(
                "{} eligible nodes would need 2^{} attempt patterns",
                elig.len(),
                elig.len()
            )));
        }
        let elig_mask = elig.iter().fold(0u64, |m, &i| m | (1 << i));

        rewards.clear();
        rewards.extend((0..n).map(|i| {
            if elig_mask >> i & 1 == 0 {
                return 0.0;
            }
            let mut r = p[i];
            for &j in &self.inst.graph.neighbor_lists()[i] {
                if elig_mask >> j & 1 == 1 {
                    r *= 1.0 - p[j];
                }
            }
            r
        }));

        let base: u64 = state
            .iter()
            .zip(&self.radix)
            .map(|(&a, &r)| a.saturating_sub(1) as u64 * r)
            .sum();
        let k = elig.len();
        let mut entries = Vec::with_capacity(1 << k.min(16));
        for pattern in 0u64..(1u64 << k) {
            let mut prob = 1.0;
            let mut attempting = 0u64;
            for (b, &i) in elig.iter().enumerate() {
                if pattern >> b & 1 == 1 {
                    prob *= p[i];
                    attempting |= 1 << i;
                } else {
                    prob *= 1.0 - p[i];
                }
            }
            if prob == 0.0 {
                continue;
            }
            let mut code = base;
            let mut rest = attempting;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let wins = self.nbr_mask[i] & attempting == 0;
                if wins || self.mode == CollisionMode::HoldT {
                    // Attempters are idle, so their decremented timer is 0.
                    code += self.reset as u64 * self.radix[i];
                }
            }
            entries.push((code, prob));
        }
        entries.sort_unstable_by_key(|e| e.0);
        let mut merged: Vec<(u64, f64)> = Vec::with_capacity(entries.len());
        for (c, pr) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += pr,
                _ => merged.push((c, pr)),
            }
        }
        Ok(merged)
    }
}

/// One-step transition distribution out of `state`, sorted by the
/// mixed-radix code of the next state.
pub fn transition_row(state: &[u16], inst: &NetworkInstance, mode: CollisionMode) -> Result<Vec<(State, f64)>> {
    if state.len() != inst.n() || state.iter().any(|&a| a as usize >= inst.t) {
        return Err(Error::param("state does not match the instance"));
    }
    let rb = RowBuilder::new(inst, mode)?;
    let mut scratch = Vec::new();
    let row = rb.row(state, &mut scratch)?;
    Ok(row
        .into_iter()
        .map(|(c, pr)| {
            let mut s = State::new();
            rb.decode(c, &mut s);
            (s, pr)
        })
        .collect())
}

/// Reachable states in breadth-first discovery order.
#[derive(Debug, Clone)]
pub struct StateSpace {
    n: usize,
    t: usize,
    codes: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn state(&self, idx: usize) -> State {
        let mut code = self.codes[idx];
        let t = self.t as u64;
        (0..self.n)
            .map(|_| {
                let a = (code % t) as u16;
                code /= t;
                a
            })
            .collect()
    }

    pub fn states(&self) -> Vec<State> {
        (0..self.len()).map(|i| self.state(i)).collect()
    }

    /// Encoded state, mixed radix with base `T` and node 0 least significant.
    pub fn code(&self, idx: usize) -> u64 {
        self.codes[idx]
    }

    pub fn index_of(&self, state: &[u16]) -> Option<usize> {
        let t = self.t as u64;
        let code = state.iter().rev().fold(0u64, |acc, &a| acc * t + a as u64);
        self.index.get(&code).copied()
    }
}

/// Row-stochastic sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl TransitionKernel {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                if c >= n {
                    return Err(Error::shape(format!("column {c} out of range for {n} states")));
                }
                cols.push(c as u32);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self { row_ptr, cols, vals })
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.vals[r].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn self_loop(&self, i: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == i).map(|(_, v)| v).sum()
    }

    /// `y = Pᵀ x`.
    pub fn transpose_apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k] as usize] += self.vals[k] * xi;
            }
        }
    }
}

/// Reachable chain with kernel and per-state rewards.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub space: StateSpace,
    pub kernel: TransitionKernel,
    /// `rewards[s * n + i]` is `r_i(s)`.
    rewards: Vec<f64>,
    t: usize,
}

impl MarkovChain {
    pub fn build(inst: &NetworkInstance, opts: &SolveOptions) -> Result<Self> {
        let started = Instant::now();
        check_state_cap(inst.n(), inst.t, opts.state_cap)?;
        let rb = RowBuilder::new(inst, opts.mode)?;
        let n = inst.n();
        let mut codes = vec![0u64];
        let mut index = HashMap::from([(0u64, 0usize)]);
        let mut rows = Vec::new();
        let mut rewards = Vec::new();
        let mut state = State::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        let mut head = 0;
        while head < codes.len() {
            if head % 256 == 0 {
                opts.check_deadline(started)?;
            }
            rb.decode(codes[head], &mut state);
            debug_assert_eq!(rb.encode(&state), codes[head]);
            let row = rb.row(&state, &mut r)?;
            rewards.extend_from_slice(&r);
            let mut out = Vec::with_capacity(row.len());
            for (c, pr) in row {
                let next = *index.entry(c).or_insert_with(|| {
                    codes.push(c);
                    codes.len() - 1
                });
                out.push((next, pr));
            }
            rows.push(out);
            head += 1;
        }
        let kernel = TransitionKernel::from_rows(rows)?;
        Ok(Self { space: StateSpace { n, t: inst.t, codes, index }, kernel, rewards, t: inst.t })
    }

    pub fn reward(&self, state_idx: usize, node: usize) -> f64 {
        self.rewards[state_idx * self.space.n + node]
    }

    /// `Θ_i = T · Σ_s π_s r_i(s)`, clamped into `[0, 1]`.
    pub fn throughput(&self, pi: &[f64]) -> Vec<f64> {
        let n = self.space.n;
        let mut theta = vec![0.0; n];
        for (s, &w) in pi.iter().enumerate() {
            for (i, th) in theta.iter_mut().enumerate() {
                *th += w * self.rewards[s * n + i];
            }
        }
        theta.iter().map(|&x| (x * self.t as f64).clamp(0.0, 1.0)).collect()
    }
}

/// Enumerates the states reachable from the all-zero vector.
pub fn enumerate_states(inst: &NetworkInstance, opts: &SolveOptions) -> Result<StateSpace> {
    MarkovChain::build(inst, opts).map(|c| c.space)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `‖Pᵀπ − π‖_∞` of the returned vector.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the lazy (damped) iteration was used.
    pub damped: bool,
}

/// Power iteration from the uniform vector until `‖Pᵀπ − π‖_∞ ≤ tol`.
///
/// When state 0 has a self-loop below [`NEAR_PERIODIC`] the chain may be
/// periodic or nearly so (a node with `p ≈ 1` cycles through its timer
/// almost deterministically); the iteration then runs on the lazy
/// operator `δ Pᵀ + (1 − δ) I` with `δ = DAMPING`, which has the same
/// fixed points, and the result is flagged `damped`.
pub fn stationary(kernel: &TransitionKernel, tol: f64, max_iters: usize) -> Result<StationaryDistribution> {
    stationary_until(kernel, tol, max_iters, None)
}

pub fn stationary_until(
    kernel: &TransitionKernel,
    tol: f64,
    max_iters: usize,
    deadline: Option<Instant>,
) -> Result<StationaryDistribution> {
    let started = Instant::now();
    let m = kernel.len();
    if m == 0 {
        return Err(Error::shape("empty kernel"));
    }
    let damped = kernel.self_loop(0) < NEAR_PERIODIC;
    let mut pi = vec![1.0 / m as f64; m];
    let mut y = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for it in 0..=max_iters {
        kernel.transpose_apply(&pi, &mut y);
        residual = pi.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual <= tol {
            return Ok(StationaryDistribution { pi, residual, iterations: it, damped });
        }
        if let Some(d) = deadline {
            if it % 16 == 0 && Instant::now() >= d {
                return Err(Error::Timeout(started.elapsed().as_secs_f64()));
            }
        }
        if damped {
            for (a, b) in pi.iter_mut().zip(&y) {
                *a = DAMPING * b + (1.0 - DAMPING) * *a;
            }
        } else {
            std::mem::swap(&mut pi, &mut y);
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
    }
    Err(Error::Convergence { iterations: max_iters, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub theta: Vec<f64>,
    pub state_count: usize,
    pub residual: f64,
    pub iterations: usize,
    pub damped: bool,
    pub mode: CollisionMode,
}

pub fn solve(inst: &NetworkInstance, opts: &SolveOptions) -> Result<ExactSolution> {
    let chain = MarkovChain::build(inst, opts)?;
    let st = stationary_until(&chain.kernel, opts.tol, opts.max_iters, opts.deadline)?;
    Ok(ExactSolution {
        theta: chain.throughput(&st.pi),
        state_count: chain.space.len(),
        residual: st.residual,
        iterations: st.iterations,
        damped: st.damped,
        mode: opts.mode,
    })
}

/// Exact per-node throughput with default options (timer rule).
pub fn throughput_exact(inst: &NetworkInstance) -> Result<Vec<f64>> {
    solve(inst, &SolveOptions::default()).map(|s| s.theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TimingProbe {
    Completed { seconds: f64, state_count: usize },
    Timeout { budget_seconds: f64 },
    Failed { reason: String },
}

impl TimingProbe {
    pub fn seconds(&self) -> Option<f64> {
        match self {
            TimingProbe::Completed { seconds, .. } => Some(*seconds),
            _ => None,
        }
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self, TimingProbe::Timeout { .. })
    }
}

/// Times one exact solve under a wall-clock budget.
pub fn mc_timing_probe(inst: &NetworkInstance, budget: Duration, opts: &SolveOptions) -> TimingProbe {
    let start = Instant::now();
    let opts = SolveOptions { deadline: Some(start + budget), ..opts.clone() };
    match solve(inst, &opts) {
        Ok(sol) => TimingProbe::Completed {
            seconds: start.elapsed().as_secs_f64(),
            state_count: sol.state_count,
        },
        Err(Error::Timeout(_)) => TimingProbe::Timeout { budget_seconds: budget.as_secs_f64() },
        Err(e) => TimingProbe::Failed { reason: e.to_string() },
    }
}
