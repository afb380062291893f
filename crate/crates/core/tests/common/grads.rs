//! Finite-difference checks of every tape op and of the full surrogate.

use std::sync::Arc;

use pcsma::diff::{grad_check, EdgeList, Tape, Tensor, Var, REL_FLOOR};
use pcsma::error::Result;
use pcsma::gnn::{self, GraphInput, LayerKind, Model, ModelConfig};
use pcsma::graph::{ConflictGraph, NetworkInstance};
use pcsma::numopt;
use rand::{Rng, SeedableRng};

use super::{random_graph, random_matrix};

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-6;

/// Reduces any tensor to a scalar with fixed random weights so every
/// entry's gradient is distinct.
fn reduce(tape: &mut Tape, v: Var, salt: u64) -> Result<Var> {
    let (r, c) = tape.shape(v);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(salt);
    let w = Arc::new(Tensor::from_shape_fn((r, c), |_| rng.random_range(0.5..1.5)));
    let target = tape.constant(Tensor::from_shape_fn((r, c), |(i, j)| 0.1 * (i as f64) - 0.05 * j as f64));
    tape.weighted_sse(v, target, w)
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// `(name, inputs, loss)` for every differentiable op.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r, c| random_matrix(&mut rng, r, c);
    let g = ConflictGraph::from_edges(4, [(0, 1), (1, 2), (1, 3), (2, 3)]).unwrap();
    let edges = Arc::new(EdgeList::from_graph(&g));
    let ne = edges.len();
    // Keep relu inputs away from the kink.
    let away = m(4, 3).mapv(|x: f64| if x.abs() < 0.05 { x + 0.1 } else { x });
    let positive = m(4, 2).mapv(|x: f64| x.abs() + 0.1);
    let e1 = edges.clone();
    let e2 = edges.clone();
    vec![
        ("matmul", vec![m(3, 4), m(4, 2)], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; reduce(t, y, 1) })),
        ("add", vec![m(3, 2), m(3, 2)], Box::new(|t, v| { let y = t.add(v[0], v[1])?; reduce(t, y, 2) })),
        ("add_row_broadcast", vec![m(3, 2), m(1, 2)], Box::new(|t, v| { let y = t.add(v[0], v[1])?; reduce(t, y, 3) })),
        ("sub", vec![m(3, 2), m(3, 2)], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; reduce(t, y, 4) })),
        ("sub_row_broadcast", vec![m(3, 2), m(1, 2)], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; reduce(t, y, 5) })),
        ("relu", vec![away], Box::new(|t, v| { let y = t.relu(v[0])?; reduce(t, y, 6) })),
        ("sigmoid", vec![m(4, 3)], Box::new(|t, v| { let y = t.sigmoid(v[0])?; reduce(t, y, 7) })),
        ("log_eps", vec![positive], Box::new(|t, v| { let y = t.log_eps(v[0], 1e-9)?; reduce(t, y, 8) })),
        ("scalar_mul", vec![m(2, 3)], Box::new(|t, v| { let y = t.scalar_mul(v[0], -1.7)?; reduce(t, y, 9) })),
        ("scale_by", vec![m(2, 3), m(1, 1)], Box::new(|t, v| { let y = t.scale_by(v[0], v[1])?; reduce(t, y, 10) })),
        ("sum", vec![m(3, 3)], Box::new(|t, v| { let y = t.sum(v[0])?; reduce(t, y, 11) })),
        ("mean", vec![m(3, 3)], Box::new(|t, v| { let y = t.mean(v[0])?; reduce(t, y, 12) })),
        ("mse", vec![m(4, 1), m(4, 1)], Box::new(|t, v| t.mse(v[0], v[1]))),
        (
            "weighted_sse",
            vec![m(4, 2), m(4, 2)],
            Box::new(|t, v| {
                let w = Arc::new(Tensor::from_shape_fn((4, 2), |(i, j)| 0.25 + 0.1 * (i + j) as f64));
                t.weighted_sse(v[0], v[1], w)
            }),
        ),
        (
            "scatter_add_edges",
            vec![m(4, 3)],
            Box::new(move |t, v| { let y = t.scatter_add_edges(v[0], e1.clone())?; reduce(t, y, 13) }),
        ),
        (
            "weighted_scatter_add",
            vec![m(4, 3), m(ne, 1)],
            Box::new(move |t, v| { let y = t.weighted_scatter_add(v[0], v[1], e2.clone())?; reduce(t, y, 14) }),
        ),
        (
            "gather_rows",
            vec![m(4, 2)],
            Box::new(|t, v| { let y = t.gather_rows(v[0], Arc::new(vec![3, 0, 0, 2, 1]))?; reduce(t, y, 15) }),
        ),
        (
            "scatter_rows",
            vec![m(5, 2)],
            Box::new(|t, v| { let y = t.scatter_rows(v[0], Arc::new(vec![1, 0, 1, 3, 2]), 4)?; reduce(t, y, 16) }),
        ),
        ("column", vec![m(3, 4)], Box::new(|t, v| { let y = t.column(v[0], 2)?; reduce(t, y, 17) })),
    ]
}

/// Largest relative error over every op.
pub fn worst_op_error(seed: u64) -> Vec<(&'static str, f64)> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| (name, grad_check(|t, v| f(t, v), &inputs, STEP).unwrap()))
        .collect()
}

/// Plain forward of a decoupled-layer model written against the parameter
/// layout, returning the prediction and the sign of every ReLU input.
pub fn dgcn_reference(config: &ModelConfig, tensors: &[Tensor], g: &ConflictGraph, x: &Tensor) -> (Tensor, Vec<bool>) {
    let mut gates = Vec::new();
    let relu = |t: Tensor, gates: &mut Vec<bool>| {
        gates.extend(t.iter().map(|&v| v > 0.0));
        t.mapv(|v| v.max(0.0))
    };
    let mut h = x.clone();
    for l in 0..config.num_layers {
        let [w_self, w_nbr, a, b] = [&tensors[4 * l], &tensors[4 * l + 1], &tensors[4 * l + 2], &tensors[4 * l + 3]];
        let z = h.dot(w_nbr);
        let att = z.dot(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rz = relu(z, &mut gates);
        let mut pre = h.dot(w_self) + b;
        for v in 0..g.n() {
            for &u in g.neighbors(v).unwrap() {
                pre.row_mut(v).scaled_add(att[[u, 0]], &rz.row(u));
            }
        }
        h = relu(pre, &mut gates);
    }
    let head = &tensors[4 * config.num_layers..];
    for k in 0..head.len() / 2 {
        let pre = h.dot(&head[2 * k]) + &head[2 * k + 1];
        h = if 2 * k + 2 < head.len() { relu(pre, &mut gates) } else { pre.mapv(|v| 1.0 / (1.0 + (-v).exp())) };
    }
    (h, gates)
}

pub struct ModelCheck {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose `±h` stencil flips a ReLU gate, where the loss is
    /// not differentiable along that axis.
    pub kinked: usize,
    /// Largest gap between the reference forward and the library forward.
    pub forward_gap: f64,
}

/// Checks the gradient of an MSE loss through the whole default D-GCN with
/// respect to every parameter coordinate and the input features.
pub fn full_dgcn_check(n: usize, seed: u64) -> ModelCheck {
    use rayon::prelude::*;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, n, 0.5);
    let config = ModelConfig { seed, ..ModelConfig::new(LayerKind::Dgcn) };
    let model = Model::init(config.clone()).unwrap();
    let graph = GraphInput::from_graph(&g);
    let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let x = gnn::node_features(&p, 2, config.feature_mode).unwrap();
    let target = Tensor::from_shape_fn((n, 1), |_| rng.random_range(0.0..0.5));
    let ntensors = model.params.tensors.len();
    let mut inputs = model.params.tensors.clone();
    inputs.push(x.clone());

    let (reference, base_gates) = dgcn_reference(&config, &model.params.tensors, &g, &x);
    let library = gnn::infer(&config, &model.params, &graph, &x).unwrap();
    let forward_gap = reference.iter().zip(&library).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i))).collect();
    let smooth: Vec<(usize, usize)> = coords
        .par_iter()
        .copied()
        .filter(|&(k, i)| {
            let mut work = inputs.clone();
            let at = [i / work[k].ncols(), i % work[k].ncols()];
            [STEP, -STEP].iter().all(|&d| {
                work[k][at] = inputs[k][at] + d;
                let (params, xx) = work.split_at(ntensors);
                dgcn_reference(&config, params, &g, &xx[0]).1 == base_gates
            })
        })
        .collect();
    let f = |t: &mut Tape, v: &[Var]| {
        let y = gnn::forward_tape(t, &config, &v[..ntensors], &graph, v[ntensors])?;
        let target = t.constant(target.clone());
        t.mse(y, target)
    };
    let worst = smooth
        .par_chunks(512)
        .map(|chunk| pcsma::diff::grad_check_coords(f, &inputs, STEP, Some(chunk)).unwrap())
        .reduce(|| 0.0, f64::max);
    ModelCheck { worst, checked: smooth.len(), kinked: coords.len() - smooth.len(), forward_gap }
}

/// The optimizer's `∂J/∂p` against central differences of the surrogate
/// utility.
pub fn input_gradient_error(n: usize, seed: u64) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, n, 0.5);
    let model = Model::init(ModelConfig { seed, ..ModelConfig::new(LayerKind::Dgcn) }).unwrap();
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
    let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let eps = numopt::DEFAULT_EPS;
    let inst = NetworkInstance::new(g.clone(), p.clone(), 2).unwrap();
    let (_, _, grad) = gnn::log_utility_input_gradient(&model, &inst, &alpha, eps).unwrap();
    let j = |p: &[f64]| {
        let th = model.predict(&NetworkInstance::new(g.clone(), p.to_vec(), 2).unwrap()).unwrap();
        numopt::utility(&th, &alpha, eps)
    };
    let mut worst = 0.0f64;
    for i in 0..n {
        let (mut up, mut down) = (p.clone(), p.clone());
        up[i] += STEP;
        down[i] -= STEP;
        let numeric = (j(&up) - j(&down)) / (2.0 * STEP);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    worst
}
