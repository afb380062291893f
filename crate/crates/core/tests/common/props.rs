//! Property bodies shared by the proptest suite and the acceptance run.

use std::sync::Arc;

use ndarray::Array2;
use pcsma::data::{self, DatasetRow, LabelSource, Labeler, TrainConfig};
use pcsma::diff::{EdgeList, Tape, Tensor};
use pcsma::gnn::{self, GraphInput, LayerKind, Model, ModelConfig};
use pcsma::graph::{CollisionMode, ConflictGraph, NetworkInstance};
use pcsma::markov::{self, SolveOptions};
use pcsma::numopt::{self, UtilityProblem};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;

use super::random_matrix;

type R = Result<(), TestCaseError>;

fn permute_rows(h: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(h.dim());
    for (i, &j) in perm.iter().enumerate() {
        out.row_mut(j).assign(&h.row(i));
    }
    out
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// One layer of every kind, and the whole model, commute with relabeling.
pub fn permutation_equivariance(g: ConflictGraph, perm: Vec<usize>, seed: u64) -> R {
    let n = g.n();
    let gp = g.permuted(&perm).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37 + seed as f64 * 0.01).fract()).collect();
    let mut pp = vec![0.0; n];
    for (i, &j) in perm.iter().enumerate() {
        pp[j] = p[i];
    }
    for kind in LayerKind::ALL {
        let config = ModelConfig { seed, ..ModelConfig::sized(kind, 2, 6) };
        let model = Model::init(config.clone()).unwrap();
        let h = random_matrix(&mut rng, n, 1);
        let a = gnn::apply_layer(&config, &model.params, 0, &GraphInput::from_graph(&g), &h).unwrap();
        let b = gnn::apply_layer(&config, &model.params, 0, &GraphInput::from_graph(&gp), &permute_rows(&h, &perm)).unwrap();
        prop_assert!(close(&permute_rows(&a, &perm), &b, 1e-12), "{kind:?} layer");

        let y = model.predict(&NetworkInstance::new(g.clone(), p.clone(), 2).unwrap()).unwrap();
        let yp = model.predict(&NetworkInstance::new(gp.clone(), pp.clone(), 2).unwrap()).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            prop_assert!((y[i] - yp[j]).abs() <= 1e-12, "{kind:?} model, node {i}");
        }
    }
    Ok(())
}

/// Splitting the edge set in two splits the decoupled neighbor term the
/// same way.
pub fn dgcn_additivity(g: ConflictGraph, mask: Vec<bool>, seed: u64) -> R {
    let n = g.n();
    let (mut e1, mut e2) = (Vec::new(), Vec::new());
    for (&e, &m) in g.edges().iter().zip(mask.iter().cycle()) {
        if m { e1.push(e) } else { e2.push(e) }
    }
    let g1 = ConflictGraph::from_edges(n, e1).unwrap();
    let g2 = ConflictGraph::from_edges(n, e2).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = random_matrix(&mut rng, n, 5);
    let w = random_matrix(&mut rng, 5, 4);
    let a = random_matrix(&mut rng, 4, 1);
    let term = |g: &ConflictGraph| gnn::dgcn_neighbor_term(&h, &GraphInput::from_graph(g), &w, &a).unwrap();
    let whole = term(&g);
    let parts = term(&g1) + term(&g2);
    prop_assert!(close(&whole, &parts, 1e-12));
    Ok(())
}

/// Adding a twin of a neighbor keeps the mean aggregate and grows the sum.
pub fn dilution_contrast(seed: u64) -> R {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let star = ConflictGraph::from_edges(2, [(0, 1)]).unwrap();
    let twin = ConflictGraph::from_edges(3, [(0, 1), (0, 2)]).unwrap();
    let h2 = random_matrix(&mut rng, 2, 1);
    let mut h3 = Array2::zeros((3, 1));
    for i in 0..2 {
        h3.row_mut(i).assign(&h2.row(i));
    }
    h3.row_mut(2).assign(&h2.row(1));

    let mean = |g: &ConflictGraph, h: &Tensor| -> Vec<f64> {
        let nb = g.neighbors(0).unwrap();
        (0..h.ncols()).map(|c| nb.iter().map(|&u| h[[u, c]]).sum::<f64>() / nb.len() as f64).collect()
    };
    let (m3, m4) = (mean(&star, &h2), mean(&twin, &h3));
    prop_assert!(m3.iter().zip(&m4).all(|(a, b)| (a - b).abs() < 1e-12));

    let config = ModelConfig { seed, ..ModelConfig::sized(LayerKind::Sage, 1, 4) };
    let sage = Model::init(config.clone()).unwrap();
    let s3 = gnn::apply_layer(&config, &sage.params, 0, &GraphInput::from_graph(&star), &h2).unwrap();
    let s4 = gnn::apply_layer(&config, &sage.params, 0, &GraphInput::from_graph(&twin), &h3).unwrap();
    prop_assert!(s3.row(0).iter().zip(s4.row(0).iter()).all(|(a, b)| (a - b).abs() < 1e-12));

    let w = random_matrix(&mut rng, 1, 4);
    let a = random_matrix(&mut rng, 4, 1);
    let d3 = gnn::dgcn_neighbor_term(&h2, &GraphInput::from_graph(&star), &w, &a).unwrap();
    let d4 = gnn::dgcn_neighbor_term(&h3, &GraphInput::from_graph(&twin), &w, &a).unwrap();
    let norm = |t: &Tensor| t.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
    let added = d4.row(0).to_owned() - d3.row(0);
    if added.iter().any(|x| x.abs() > 1e-12) {
        prop_assert!(norm(&d4) > norm(&d3));
    }
    Ok(())
}

pub fn row_stochasticity(inst: NetworkInstance, state_seed: Vec<u16>) -> R {
    let state: Vec<u16> = state_seed.iter().cycle().take(inst.n()).map(|&a| a % inst.t as u16).collect();
    for mode in [CollisionMode::TimerRule, CollisionMode::HoldT] {
        let row = markov::transition_row(&state, &inst, mode).unwrap();
        let total: f64 = row.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "{mode:?}: row sums to {total}");
        prop_assert!(row.iter().all(|(s, p)| *p >= 0.0 && s.iter().all(|&a| (a as usize) < inst.t)));
    }
    Ok(())
}

pub fn stationary_residual(inst: NetworkInstance) -> R {
    for mode in [CollisionMode::TimerRule, CollisionMode::HoldT] {
        let sol = markov::solve(&inst, &SolveOptions::default().with_mode(mode)).unwrap();
        prop_assert!(sol.residual <= 1e-12, "{mode:?}: residual {}", sol.residual);
        prop_assert!(sol.theta.iter().all(|th| (0.0..=1.0).contains(th)));
    }
    Ok(())
}

pub fn csv_roundtrip(insts: Vec<NetworkInstance>, thetas: Vec<f64>, seeds: Vec<u64>) -> R {
    let rows: Vec<DatasetRow> = insts
        .into_iter()
        .enumerate()
        .map(|(k, inst)| DatasetRow {
            theta: (0..inst.n()).map(|i| thetas[(k + i) % thetas.len()]).collect(),
            graph: inst.graph,
            t: inst.t,
            p: inst.p,
            label_source: if k % 2 == 0 { LabelSource::Mc } else { LabelSource::Sim },
            seed: seeds[k % seeds.len()],
            collision_mode: if k % 3 == 0 { CollisionMode::HoldT } else { CollisionMode::TimerRule },
        })
        .collect();
    let mut first = Vec::new();
    data::write_csv(&rows, &mut first).unwrap();
    let back = data::read_csv(first.as_slice()).unwrap();
    prop_assert_eq!(&back, &rows);
    let mut second = Vec::new();
    data::write_csv(&back, &mut second).unwrap();
    prop_assert_eq!(first, second);
    Ok(())
}

/// Same data, configuration and seed give identical weights, with and
/// without sharded gradients.
pub fn training_determinism(seed: u64, shards: usize) -> R {
    let spec = data::DatasetSpec::new(vec![2, 3], vec![2], 4, Labeler::Mc, seed);
    let rows = data::generate_dataset(&spec).unwrap();
    let config = ModelConfig { seed, ..ModelConfig::sized(LayerKind::Dgcn, 2, 4) };
    let hyper = TrainConfig { max_epochs: 3, batch_size: 3, seed, shards, ..TrainConfig::default() };
    let (a, ra) = data::train(&config, &rows[..6], &rows[6..], &hyper).unwrap();
    let (b, rb) = data::train(&config, &rows[..6], &rows[6..], &hyper).unwrap();
    prop_assert_eq!(a.params.flatten(), b.params.flatten());
    prop_assert_eq!(ra.lr_trace, rb.lr_trace);
    Ok(())
}

pub fn nmae_scale(pairs: Vec<(f64, f64)>, c: f64) -> R {
    let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let base = data::metrics(&pred, &truth).unwrap();
    let scaled = data::metrics(
        &pred.iter().map(|x| x * c).collect::<Vec<_>>(),
        &truth.iter().map(|x| x * c).collect::<Vec<_>>(),
    )
    .unwrap();
    prop_assert!((base.nmae - scaled.nmae).abs() <= 1e-12 * base.nmae.max(1.0));
    Ok(())
}

/// Every iterate of the exact-model ascent stays in the unit box.
pub fn projection(inst: NetworkInstance, lr: f64, iters: usize) -> R {
    let n = inst.n();
    let alpha = (0..n).map(|i| 0.3 + 0.1 * i as f64).collect();
    let mut prob = UtilityProblem::new(inst.graph.clone(), inst.t, alpha, inst.p.clone(), iters);
    prob.lr = lr;
    let traj = numopt::optimize_mc(&prob).unwrap();
    prop_assert_eq!(traj.trajectory.len(), iters + 1);
    for pt in &traj.trajectory {
        prop_assert!(pt.p.iter().all(|p| (0.0..=1.0).contains(p)), "iter {}: {:?}", pt.iter, pt.p);
    }
    Ok(())
}

/// Adding an edge never raises the exact throughput of either endpoint.
pub fn edge_endpoint_monotonicity(inst: NetworkInstance, pick: usize) -> R {
    let n = inst.n();
    let missing: Vec<(usize, usize)> =
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|&(u, v)| !inst.graph.has_edge(u, v)).collect();
    if missing.is_empty() {
        return Ok(());
    }
    let (u, v) = missing[pick % missing.len()];
    let denser = NetworkInstance::new(inst.graph.with_edge(u, v).unwrap(), inst.p.clone(), inst.t).unwrap();
    let before = markov::throughput_exact(&inst).unwrap();
    let after = markov::throughput_exact(&denser).unwrap();
    prop_assert!(after[u] <= before[u] + 1e-10, "node {u}: {} -> {}", before[u], after[u]);
    prop_assert!(after[v] <= before[v] + 1e-10, "node {v}: {} -> {}", before[v], after[v]);
    Ok(())
}

/// Backward of a sum of two losses is the sum of their gradients.
pub fn backward_linearity(seed: u64) -> R {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x0 = random_matrix(&mut rng, 3, 2);
    let w0 = random_matrix(&mut rng, 2, 2);
    let edges = Arc::new(EdgeList::from_graph(&ConflictGraph::path(3).unwrap()));
    let f = |t: &mut Tape, x, w| {
        let z = t.matmul(x, w).unwrap();
        let s = t.sigmoid(z).unwrap();
        t.sum(s).unwrap()
    };
    let g = |t: &mut Tape, x, w| {
        let z = t.matmul(x, w).unwrap();
        let a = t.scatter_add_edges(z, edges.clone()).unwrap();
        let r = t.relu(a).unwrap();
        t.mean(r).unwrap()
    };
    let grads = |which: u8| {
        let mut t = Tape::new();
        let (x, w) = (t.param(x0.clone()), t.param(w0.clone()));
        let loss = match which {
            0 => f(&mut t, x, w),
            1 => g(&mut t, x, w),
            _ => {
                let (a, b) = (f(&mut t, x, w), g(&mut t, x, w));
                t.add(a, b).unwrap()
            }
        };
        let gr = t.backward(loss).unwrap();
        (gr.wrt(x), gr.wrt(w))
    };
    let (fx, fw) = grads(0);
    let (gx, gw) = grads(1);
    let (sx, sw) = grads(2);
    prop_assert!(close(&(fx + gx), &sx, 1e-14) && close(&(fw + gw), &sw, 1e-14));
    Ok(())
}
