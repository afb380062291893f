//! Log-utility maximization over access probabilities.
//!
//! `J(p) = Σ_i α_i log(Θ_i(p) + ε)` is climbed by projected gradient
//! ascent, `p ← clamp(p + lr ∇J, 0, 1)`, with one of two gradient sources:
//! central finite differences of the exact solver, or backpropagation
//! through a trained surrogate to its input probabilities.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{log_utility_input_gradient, Model};
use crate::graph::{erdos_renyi, ConflictGraph, NetworkInstance};
use crate::markov::{self, SolveOptions};

pub const DEFAULT_EPS: f64 = 1e-9;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    #[serde(rename = "mc-fd")]
    McFd,
    #[serde(rename = "dgcn-backprop")]
    DgcnBackprop,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::McFd => "mc-fd",
            Backend::DgcnBackprop => "dgcn-backprop",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc-fd" | "mc" => Ok(Backend::McFd),
            "dgcn-backprop" | "dgcn" | "gnn" => Ok(Backend::DgcnBackprop),
            other => Err(Error::param(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UtilityProblem {
    pub graph: ConflictGraph,
    pub t: usize,
    pub alpha: Vec<f64>,
    pub eps: f64,
    pub p_init: Vec<f64>,
    pub lr: f64,
    pub iters: usize,
    pub backend: Backend,
    pub fd_step: f64,
    pub solve: SolveOptions,
}

impl UtilityProblem {
    pub fn new(graph: ConflictGraph, t: usize, alpha: Vec<f64>, p_init: Vec<f64>, iters: usize) -> Self {
        Self {
            graph,
            t,
            alpha,
            eps: DEFAULT_EPS,
            p_init,
            lr: DEFAULT_LR,
            iters,
            backend: Backend::McFd,
            fd_step: DEFAULT_FD_STEP,
            solve: SolveOptions::default(),
        }
    }

    /// Three-node chain `0–1–2` started near a starved configuration.
    pub fn chain3(iters: usize) -> Self {
        Self::new(ConflictGraph::path(3).expect("path"), 2, vec![0.6, 0.6, 0.3], vec![0.97, 0.01, 0.05], iters)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        let mut v = Vec::new();
        if self.alpha.len() != n || self.p_init.len() != n {
            v.push(format!(
                "alpha ({}) and p_init ({}) must both have n={n} entries",
                self.alpha.len(),
                self.p_init.len()
            ));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            v.push("alpha must be finite and ≥ 0".into());
        }
        if self.p_init.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            v.push("p_init must lie in [0,1]".into());
        }
        if !(self.eps > 0.0) {
            v.push("eps must be > 0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push("lr must be > 0".into());
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.5) {
            v.push("fd_step must be in (0, 0.5)".into());
        }
        if self.t < 1 {
            v.push("T must be ≥ 1".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn instance(&self, p: Vec<f64>) -> Result<NetworkInstance> {
        NetworkInstance::new(self.graph.clone(), p, self.t)
    }
}

pub fn utility(theta: &[f64], alpha: &[f64], eps: f64) -> f64 {
    theta.iter().zip(alpha).map(|(th, a)| a * (th + eps).ln()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(rename = "J")]
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub backend: Backend,
    pub p_init: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lr: f64,
    pub iters: usize,
    /// Iterate 0 is the starting point; iterate `k` follows the `k`-th update.
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_p: Vec<f64>,
    #[serde(rename = "final_J")]
    pub final_j: f64,
    /// Exact utility at the final point, for surrogate runs whose state
    /// space fits the cap.
    #[serde(rename = "mc_eval_J", skip_serializing_if = "Option::is_none", default)]
    pub mc_eval_j: Option<f64>,
    pub wall_time_s: f64,
}

impl Trajectory {
    pub fn initial_j(&self) -> f64 {
        self.trajectory[0].j
    }

    /// Flat `iter,J,p_0,…` table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.p_init.len();
        let mut header = vec!["iter".to_string(), "J".to_string()];
        header.extend((0..n).map(|i| format!("p_{i}")));
        w.write_record(&header)?;
        for pt in &self.trajectory {
            let mut rec = vec![pt.iter.to_string(), format!("{:.16e}", pt.j)];
            rec.extend(pt.p.iter().map(|x| format!("{x:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn at_iteration(e: Error, k: usize) -> Error {
    let tag = |m: String| format!("iteration {k}: {m}");
    match e {
        Error::Numeric(m) => Error::Numeric(tag(m)),
        Error::Resource(m) => Error::Resource(tag(m)),
        Error::Parameter(m) => Error::Parameter(tag(m)),
        Error::Convergence { iterations, residual } => {
            Error::Numeric(tag(format!("stationary solve stalled after {iterations} iterations (residual {residual:e})")))
        }
        other => other,
    }
}

fn project(p: &mut [f64], grad: &[f64], lr: f64) {
    for (x, g) in p.iter_mut().zip(grad) {
        *x = (*x + lr * g).clamp(0.0, 1.0);
    }
}

fn exact_theta(problem: &UtilityProblem, p: &[f64]) -> Result<Vec<f64>> {
    Ok(markov::solve(&problem.instance(p.to_vec())?, &problem.solve)?.theta)
}

/// Finite-difference gradient of `J` under the exact model. Coordinates
/// use central differences unless a perturbation would leave `[0,1]`.
pub fn mc_gradient(problem: &UtilityProblem, p: &[f64]) -> Result<Vec<f64>> {
    let h = problem.fd_step;
    (0..p.len())
        .into_par_iter()
        .map(|i| {
            let up = (p[i] + h).min(1.0);
            let down = (p[i] - h).max(0.0);
            let at = |x: f64| -> Result<f64> {
                let mut q = p.to_vec();
                q[i] = x;
                Ok(utility(&exact_theta(problem, &q)?, &problem.alpha, problem.eps))
            };
            Ok((at(up)? - at(down)?) / (up - down))
        })
        .collect()
}

pub fn optimize_mc(problem: &UtilityProblem) -> Result<Trajectory> {
    problem.validate()?;
    markov::check_state_cap(problem.graph.n(), problem.t, problem.solve.state_cap)?;
    let started = Instant::now();
    let mut p = problem.p_init.clone();
    let mut points = Vec::with_capacity(problem.iters + 1);
    for k in 0..=problem.iters {
        let theta = exact_theta(problem, &p).map_err(|e| at_iteration(e, k))?;
        let j = utility(&theta, &problem.alpha, problem.eps);
        points.push(TrajectoryPoint { iter: k, p: p.clone(), theta, j });
        if k == problem.iters {
            break;
        }
        let grad = mc_gradient(problem, &p).map_err(|e| at_iteration(e, k))?;
        project(&mut p, &grad, problem.lr);
    }
    Ok(finish(problem, Backend::McFd, points, None, started))
}

pub fn optimize_gnn(problem: &UtilityProblem, model: &Model) -> Result<Trajectory> {
    problem.validate()?;
    let started = Instant::now();
    let mut p = problem.p_init.clone();
    let mut points = Vec::with_capacity(problem.iters + 1);
    for k in 0..=problem.iters {
        let inst = problem.instance(p.clone())?;
        let (theta, j, grad) = log_utility_input_gradient(model, &inst, &problem.alpha, problem.eps)?;
        points.push(TrajectoryPoint { iter: k, p: p.clone(), theta, j });
        if k == problem.iters {
            break;
        }
        project(&mut p, &grad, problem.lr);
    }
    let wall = started.elapsed().as_secs_f64();
    let mc_eval = match markov::check_state_cap(problem.graph.n(), problem.t, problem.solve.state_cap) {
        Ok(_) => Some(utility(&exact_theta(problem, &p)?, &problem.alpha, problem.eps)),
        Err(_) => None,
    };
    let mut traj = finish(problem, Backend::DgcnBackprop, points, mc_eval, started);
    traj.wall_time_s = wall;
    Ok(traj)
}

/// Runs `problem` with its own backend; the surrogate backend needs `model`.
pub fn optimize(problem: &UtilityProblem, model: Option<&Model>) -> Result<Trajectory> {
    match (problem.backend, model) {
        (Backend::McFd, _) => optimize_mc(problem),
        (Backend::DgcnBackprop, Some(m)) => optimize_gnn(problem, m),
        (Backend::DgcnBackprop, None) => Err(Error::param("the dgcn-backprop backend needs a model checkpoint")),
    }
}

fn finish(
    problem: &UtilityProblem,
    backend: Backend,
    points: Vec<TrajectoryPoint>,
    mc_eval_j: Option<f64>,
    started: Instant,
) -> Trajectory {
    let last = points.last().expect("at least the initial point");
    Trajectory {
        backend,
        p_init: problem.p_init.clone(),
        alpha: problem.alpha.clone(),
        lr: problem.lr,
        iters: problem.iters,
        final_p: last.p.clone(),
        final_j: last.j,
        mc_eval_j,
        wall_time_s: started.elapsed().as_secs_f64(),
        trajectory: points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendTiming {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub iters: usize,
    pub mc_seconds: f64,
    pub gnn_seconds: f64,
    /// `mc_seconds / gnn_seconds`.
    pub ratio: f64,
    #[serde(rename = "mc_final_J")]
    pub mc_final_j: f64,
    #[serde(rename = "gnn_final_J")]
    pub gnn_final_j: f64,
    #[serde(rename = "gnn_mc_eval_J", skip_serializing_if = "Option::is_none", default)]
    pub gnn_mc_eval_j: Option<f64>,
}

/// Wall time of both backends on the same problem and iteration budget.
pub fn bench_backends(problem: &UtilityProblem, model: &Model) -> Result<BackendTiming> {
    let mc = optimize_mc(problem)?;
    let gnn = optimize_gnn(problem, model)?;
    Ok(BackendTiming {
        n: problem.graph.n(),
        t: problem.t,
        iters: problem.iters,
        mc_seconds: mc.wall_time_s,
        gnn_seconds: gnn.wall_time_s,
        ratio: mc.wall_time_s / gnn.wall_time_s.max(f64::MIN_POSITIVE),
        mc_final_j: mc.final_j,
        gnn_final_j: gnn.final_j,
        gnn_mc_eval_j: gnn.mc_eval_j,
    })
}

/// Seed of the fixed ten-node benchmark topology.
pub const BENCH10_SEED: u64 = 2025;

/// Fixed ten-node `G(10, 0.3)` benchmark instance with uniform weights and
/// a uniform `p = 0.5` start.
pub fn bench10_problem(iters: usize) -> UtilityProblem {
    let g = erdos_renyi(10, 0.3, BENCH10_SEED).expect("valid generator arguments");
    UtilityProblem::new(g, 2, vec![1.0; 10], vec![0.5; 10], iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::isolated_node_throughput;

    #[test]
    fn utility_examples() {
        assert!((utility(&[1.0, 1.0], &[1.0, 1.0], 1e-9) - 2e-9).abs() < 1e-15);
        assert!((utility(&[0.0], &[1.0], 1e-9) - (-20.723265836946414)).abs() < 1e-9);
    }

    #[test]
    fn single_node_climbs_toward_one() {
        let g = ConflictGraph::empty(1).unwrap();
        let mut prob = UtilityProblem::new(g, 3, vec![1.0], vec![0.2], 200);
        prob.lr = 0.5;
        let traj = optimize_mc(&prob).unwrap();
        assert!(traj.final_p[0] > 0.95, "{:?}", traj.final_p);
        assert!(traj.trajectory.windows(2).all(|w| w[1].j >= w[0].j - 1e-12));
        let th = traj.trajectory.last().unwrap().theta[0];
        assert!((th - isolated_node_throughput(traj.final_p[0], 3)).abs() < 1e-10);
    }

    #[test]
    fn zero_iterations_keep_initial_point() {
        let traj = optimize_mc(&UtilityProblem::chain3(0)).unwrap();
        assert_eq!(traj.trajectory.len(), 1);
        assert_eq!(traj.final_p, vec![0.97, 0.01, 0.05]);
        assert_eq!(traj.final_j, traj.initial_j());
    }

    #[test]
    fn one_sided_difference_at_the_boundary() {
        let g = ConflictGraph::empty(1).unwrap();
        let prob = UtilityProblem::new(g, 2, vec![1.0], vec![1.0], 0);
        let grad = mc_gradient(&prob, &[1.0]).unwrap();
        let h = prob.fd_step;
        let j = |p: f64| isolated_node_throughput(p, 2).ln();
        assert!((grad[0] - (j(1.0) - j(1.0 - h)) / h).abs() < 1e-6);
    }

    #[test]
    fn chain_ascent_stays_in_box() {
        let traj = optimize_mc(&UtilityProblem::chain3(40)).unwrap();
        assert!(traj.final_j >= traj.initial_j());
        for pt in &traj.trajectory {
            assert!(pt.p.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,J,p_0,p_1,p_2\n"));
        assert_eq!(text.lines().count(), 42);
    }

    #[test]
    fn problem_validation() {
        let mut p = UtilityProblem::chain3(1);
        p.alpha[0] = -1.0;
        assert!(matches!(optimize_mc(&p), Err(Error::Validation(_))));
        let mut p = UtilityProblem::chain3(1);
        p.p_init.pop();
        assert!(optimize_mc(&p).is_err());
        let p = UtilityProblem { backend: Backend::DgcnBackprop, ..UtilityProblem::chain3(1) };
        assert!(optimize(&p, None).is_err());
    }
}
