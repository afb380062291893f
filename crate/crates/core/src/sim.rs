//! Slot-synchronous Monte Carlo simulation of saturated p-CSMA.
//!
//! Each node keeps a residual timer `a_i`, initially zero. In every slot:
//!
//! 1. a node is eligible when its own timer and all of its neighbors'
//!    timers are zero;
//! 2. each eligible node attempts independently with probability `p_i`
//!    (one uniform draw per eligible node, in ascending id order; blocked
//!    nodes draw nothing);
//! 3. an attempting node with no attempting neighbor wins, sets its timer
//!    to `T-1` and counts one collision-free transmission start;
//! 4. under [`CollisionMode::HoldT`] losing attempters also set `T-1`;
//! 5. every other node decrements toward zero.
//!
//! Throughput is `successes * T / L`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CollisionMode, NetworkInstance};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub theta_hat: Vec<f64>,
    pub success_starts: Vec<u64>,
    pub slots: u64,
    pub seed: u64,
    pub t: usize,
}

impl SimResult {
    /// Standard error of each estimate.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.theta_hat
            .iter()
            .map(|&th| standard_error(th, self.t, self.slots))
            .collect()
    }
}

pub fn simulate(inst: &NetworkInstance, slots: u64, seed: u64, mode: CollisionMode) -> Result<SimResult> {
    simulate_observed(inst, slots, &mut rng::seeded(seed), seed, mode, |_, _| {})
}

/// Runs the simulation with an explicit stream; `observe(slot, winners)`
/// is called for every slot that has at least one winner.
pub fn simulate_observed(
    inst: &NetworkInstance,
    slots: u64,
    rng: &mut rng::Rng,
    seed: u64,
    mode: CollisionMode,
    mut observe: impl FnMut(u64, &[usize]),
) -> Result<SimResult> {
    if slots == 0 {
        return Err(Error::param("slot count L must be ≥ 1"));
    }
    let v = inst.validate();
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let n = inst.n();
    let nbrs = inst.graph.neighbor_lists();
    let reset = u32::try_from(inst.t - 1).map_err(|_| Error::param("T too large"))?;
    let p = &inst.p;

    let mut timer = vec![0u32; n];
    let mut attempt = vec![false; n];
    let mut won = vec![false; n];
    let mut count = vec![0u64; n];
    let mut eligible = Vec::with_capacity(n);
    let mut winners = Vec::with_capacity(n);

    for slot in 0..slots {
        eligible.clear();
        for i in 0..n {
            if timer[i] == 0 && nbrs[i].iter().all(|&j| timer[j] == 0) {
                eligible.push(i);
            }
        }
        for &i in &eligible {
            attempt[i] = rng.random::<f64>() < p[i];
        }
        winners.clear();
        for &i in &eligible {
            if attempt[i] && nbrs[i].iter().all(|&j| !attempt[j]) {
                winners.push(i);
            }
        }
        for &i in &winners {
            won[i] = true;
            count[i] += 1;
        }
        for i in 0..n {
            if won[i] || (mode == CollisionMode::HoldT && attempt[i]) {
                timer[i] = reset;
            } else if timer[i] > 0 {
                timer[i] -= 1;
            }
        }
        for &i in &eligible {
            attempt[i] = false;
        }
        if !winners.is_empty() {
            observe(slot, &winners);
            for &i in &winners {
                won[i] = false;
            }
        }
    }

    let theta_hat = count
        .iter()
        .map(|&c| (c as f64 * inst.t as f64 / slots as f64).min(1.0))
        .collect();
    Ok(SimResult { theta_hat, success_starts: count, slots, seed, t: inst.t })
}

/// Poisson-approximation standard error `sqrt(theta * T / L)`.
pub fn standard_error(theta_hat: f64, t: usize, slots: u64) -> f64 {
    (theta_hat.max(0.0) * t as f64 / slots as f64).sqrt()
}

/// Half-width of the 95% interval, `1.96 * SE`.
pub fn ci95_half_width(theta_hat: f64, t: usize, slots: u64) -> f64 {
    1.96 * standard_error(theta_hat, t, slots)
}

/// Throughput of an isolated node, `Tp / (1 - p + Tp)`.
pub fn isolated_node_throughput(p: f64, t: usize) -> f64 {
    let tp = t as f64 * p;
    if tp == 0.0 {
        0.0
    } else {
        tp / (1.0 - p + tp)
    }
}
