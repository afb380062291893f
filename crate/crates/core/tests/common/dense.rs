//! Brute-force stationary solve over the whole `{0,…,T−1}^n` timer space,
//! written from the protocol rules alone.

use pcsma::graph::{CollisionMode, NetworkInstance};

fn decode(mut code: usize, n: usize, t: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let a = code % t;
            code /= t;
            a
        })
        .collect()
}

fn encode(a: &[usize], t: usize) -> usize {
    a.iter().rev().fold(0, |acc, &x| acc * t + x)
}

/// Transition matrix over every timer vector plus, for each state and
/// node, the probability that the node starts a successful transmission.
pub struct DenseChain {
    pub n: usize,
    pub t: usize,
    pub matrix: Vec<Vec<f64>>,
    pub start_prob: Vec<Vec<f64>>,
}

pub fn build(inst: &NetworkInstance, mode: CollisionMode) -> DenseChain {
    let (n, t) = (inst.n(), inst.t);
    let size = t.pow(n as u32);
    let g = &inst.graph;
    let mut matrix = vec![vec![0.0; size]; size];
    let mut start_prob = vec![vec![0.0; n]; size];
    for s in 0..size {
        let a = decode(s, n, t);
        let can_try: Vec<bool> = (0..n).map(|i| a[i] == 0 && (0..n).all(|j| !g.has_edge(i, j) || a[j] == 0)).collect();
        // Every subset of all nodes; non-eligible members make the subset impossible.
        for subset in 0usize..(1 << n) {
            let tries = |i: usize| subset >> i & 1 == 1;
            if (0..n).any(|i| tries(i) && !can_try[i]) {
                continue;
            }
            let mut prob = 1.0;
            for i in (0..n).filter(|&i| can_try[i]) {
                prob *= if tries(i) { inst.p[i] } else { 1.0 - inst.p[i] };
            }
            if prob == 0.0 {
                continue;
            }
            let mut next = vec![0; n];
            for i in 0..n {
                let collided = (0..n).any(|j| j != i && tries(j) && g.has_edge(i, j));
                next[i] = if tries(i) && !collided {
                    start_prob[s][i] += prob;
                    t - 1
                } else if tries(i) && mode == CollisionMode::HoldT {
                    t - 1
                } else if a[i] > 0 {
                    a[i] - 1
                } else {
                    0
                };
            }
            matrix[s][encode(&next, t)] += prob;
        }
    }
    DenseChain { n, t, matrix, start_prob }
}

/// Solves `πᵀ(P − I) = 0`, `Σπ = 1` by Gaussian elimination with partial
/// pivoting; the last balance equation is replaced by the normalization.
pub fn stationary(matrix: &[Vec<f64>]) -> Vec<f64> {
    let m = matrix.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, row) in a.iter_mut().enumerate() {
        for j in 0..m {
            row[j] = matrix[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[m - 1] = vec![1.0; m + 1];
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular balance system");
        for j in col..=m {
            a[col][j] /= d;
        }
        for r in 0..m {
            if r != col && a[r][col] != 0.0 {
                let f = a[r][col];
                for j in col..=m {
                    a[r][j] -= f * a[col][j];
                }
            }
        }
    }
    a.iter().map(|row| row[m]).collect()
}

/// Per-node throughput: `T` times the long-run rate of successful starts.
pub fn throughput(inst: &NetworkInstance, mode: CollisionMode) -> Vec<f64> {
    let chain = build(inst, mode);
    let pi = stationary(&chain.matrix);
    (0..chain.n)
        .map(|i| chain.t as f64 * pi.iter().zip(&chain.start_prob).map(|(w, r)| w * r[i]).sum::<f64>())
        .collect()
}

/// Timer-rule only: fraction of slots the node's timer is nonzero plus the
/// start rate, a second route to the same quantity.
pub fn busy_fraction_throughput(inst: &NetworkInstance) -> Vec<f64> {
    let chain = build(inst, CollisionMode::TimerRule);
    let pi = stationary(&chain.matrix);
    (0..chain.n)
        .map(|i| {
            let busy: f64 = (0..pi.len()).filter(|&s| decode(s, chain.n, chain.t)[i] > 0).map(|s| pi[s]).sum();
            let starts: f64 = pi.iter().zip(&chain.start_prob).map(|(w, r)| w * r[i]).sum();
            busy + starts
        })
        .collect()
}
