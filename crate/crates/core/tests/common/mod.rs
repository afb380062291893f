#![allow(dead_code)]

pub mod dense;
pub mod grads;
pub mod props;

use ndarray::Array2;
use pcsma::graph::{ConflictGraph, NetworkInstance};
use proptest::prelude::*;
use rand::Rng;

pub fn random_graph(rng: &mut impl Rng, n: usize, p_edge: f64) -> ConflictGraph {
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|_| rng.random::<f64>() < p_edge)
        .collect();
    ConflictGraph::from_edges(n, edges).unwrap()
}

pub fn random_instance(rng: &mut impl Rng, n: usize, t: usize) -> NetworkInstance {
    let g = random_graph(rng, n, 0.5);
    let p = (0..n).map(|_| rng.random::<f64>()).collect();
    NetworkInstance::new(g, p, t).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

pub fn graph_strategy(max_n: usize) -> impl Strategy<Value = ConflictGraph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let pairs = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
            let edges: Vec<_> = pairs.zip(bits).filter(|(_, b)| *b).map(|(e, _)| e).collect();
            ConflictGraph::from_edges(n, edges).unwrap()
        })
    })
}

pub fn instance_strategy(max_n: usize, max_t: usize) -> impl Strategy<Value = NetworkInstance> {
    (graph_strategy(max_n), 1..=max_t).prop_flat_map(|(g, t)| {
        let n = g.n();
        proptest::collection::vec(0.0..=1.0f64, n).prop_map(move |p| NetworkInstance::new(g.clone(), p, t).unwrap())
    })
}

/// Uniformly random permutation of `0..n`.
pub fn permutation_strategy(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}
