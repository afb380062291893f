//! Conflict graphs and network instances.
//!
//! A [`ConflictGraph`] is an undirected simple graph on dense node ids
//! `0..n`; an edge between two transmitters means they cannot hold the
//! channel at the same time. A [`NetworkInstance`] adds the per-node
//! attempt probabilities and the packet duration, and is the input to
//! every throughput solver in the crate.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Undirected interference topology. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConflictGraph {
    n: usize,
    /// Sorted, deduplicated pairs with `i < j`.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor list per node.
    adj: Vec<Vec<usize>>,
}

impl ConflictGraph {
    /// Builds a graph from unordered pairs. Duplicates (in either
    /// orientation) collapse; self-loops and out-of-range ids are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("graph must have at least one node"));
        }
        let mut list = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::param(format!("edge {u}-{v} out of range for n={n}")));
            }
            if u == v {
                return Err(Error::param(format!("self-loop at node {u}")));
            }
            list.push((u.min(v), u.max(v)));
        }
        list.sort_unstable();
        list.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &list {
            adj[u].push(v);
            adj[v].push(u);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        Ok(Self { n, edges: list, adj })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edges(n, [])
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Star with hub `0`.
    pub fn star(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (0, i)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adj
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::param(format!("node {i} out of range for n={}", self.n)))
    }

    /// Neighbor lists for all nodes; index `i` holds `N(i)`.
    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.adj
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.adj[u].binary_search(&v).is_ok()
    }

    /// Returns a new graph with the extra edge.
    pub fn with_edge(&self, u: usize, v: usize) -> Result<Self> {
        Self::from_edges(self.n, self.edges.iter().copied().chain([(u, v)]))
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::param("permutation length mismatch"));
        }
        Self::from_edges(self.n, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }

    /// Dense symmetric 0/1 matrix, row-major.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.n]; self.n];
        for &(u, v) in &self.edges {
            m[u][v] = 1;
            m[v][u] = 1;
        }
        m
    }

    /// Row-major `'0'`/`'1'` string of length `n²`.
    pub fn to_adjacency_string(&self) -> String {
        self.adjacency_matrix()
            .into_iter()
            .flatten()
            .map(|b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    /// Parses the row-major adjacency string. The string must have length
    /// `n²`, contain only `0`/`1`, be symmetric and have a zero diagonal.
    pub fn from_adjacency_str(n: usize, s: &str) -> Result<Self> {
        let violations = adjacency_violations(n, s);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let b = s.as_bytes();
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Self::from_edges(n, edges.filter(|&(i, j)| b[i * n + j] == b'1'))
    }

    /// Parses `u-v,u-v,...`. An empty string is the edgeless graph.
    pub fn from_edge_list_str(n: usize, s: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (a, b) = tok
                .split_once('-')
                .ok_or_else(|| Error::param(format!("bad edge token {tok:?}, expected u-v")))?;
            let u = a.trim().parse().map_err(|_| Error::param(format!("bad node id in {tok:?}")))?;
            let v = b.trim().parse().map_err(|_| Error::param(format!("bad node id in {tok:?}")))?;
            edges.push((u, v));
        }
        Self::from_edges(n, edges)
    }

    /// Number of nodes implied by an adjacency string of length `n²`.
    pub fn order_of_adjacency_str(s: &str) -> Option<usize> {
        let n = (s.len() as f64).sqrt().round() as usize;
        (n * n == s.len() && n > 0).then_some(n)
    }

    fn is_consistent(&self) -> bool {
        self.adj.len() == self.n
            && self.edges.iter().all(|&(u, v)| u < v && v < self.n)
            && self.adj.iter().map(Vec::len).sum::<usize>() == 2 * self.edges.len()
            && self.edges.iter().all(|&(u, v)| self.has_edge(u, v) && self.has_edge(v, u))
    }
}

impl fmt::Display for ConflictGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(|(u, v)| format!("{u}-{v}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Checks an adjacency string without building a graph.
pub fn adjacency_violations(n: usize, s: &str) -> Vec<String> {
    let b = s.as_bytes();
    if b.len() != n * n {
        return vec![format!("adjacency length {} does not equal n²={}", b.len(), n * n)];
    }
    let mut out = Vec::new();
    if let Some(pos) = b.iter().position(|&c| c != b'0' && c != b'1') {
        out.push(format!("adjacency character {pos} is not 0 or 1"));
        return out;
    }
    for i in 0..n {
        if b[i * n + i] != b'0' {
            out.push(format!("adjacency diagonal ({i},{i}) is nonzero"));
        }
        for j in i + 1..n {
            if b[i * n + j] != b[j * n + i] {
                out.push(format!("adjacency is asymmetric at ({i},{j})"));
            }
        }
    }
    out
}

/// Erdős–Rényi `G(n, p_edge)`; each pair `i < j` in lexicographic order
/// consumes one uniform draw from [`rng::seeded`]`(seed)`.
pub fn erdos_renyi(n: usize, p_edge: f64, seed: u64) -> Result<ConflictGraph> {
    erdos_renyi_with(n, p_edge, &mut rng::seeded(seed))
}

pub fn erdos_renyi_with(n: usize, p_edge: f64, rng: &mut rng::Rng) -> Result<ConflictGraph> {
    if !(0.0..=1.0).contains(&p_edge) {
        return Err(Error::param(format!("p_edge={p_edge} outside [0,1]")));
    }
    if n == 0 {
        return Err(Error::param("graph must have at least one node"));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p_edge {
                edges.push((i, j));
            }
        }
    }
    ConflictGraph::from_edges(n, edges)
}

/// Idle slots a deferring node waits. Fixed to one slot throughout.
pub const SIGMA: u32 = 1;

/// A conflict graph with attempt probabilities and packet duration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    pub graph: ConflictGraph,
    pub p: Vec<f64>,
    /// Packet duration in slots.
    pub t: usize,
    pub sigma: u32,
}

impl NetworkInstance {
    /// Builds a validated instance.
    pub fn new(graph: ConflictGraph, p: Vec<f64>, t: usize) -> Result<Self> {
        let inst = Self { graph, p, t, sigma: SIGMA };
        let v = inst.validate();
        if v.is_empty() {
            Ok(inst)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// All invariant violations, empty when the instance is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.p.len() != self.graph.n() {
            out.push(format!("p has length {} but graph has {} nodes", self.p.len(), self.graph.n()));
        }
        for (i, &pi) in self.p.iter().enumerate() {
            if !(0.0..=1.0).contains(&pi) {
                out.push(format!("p[{i}] out of [0,1]"));
            }
        }
        if self.t < 1 {
            out.push("T must be ≥ 1".to_string());
        }
        if self.sigma != SIGMA {
            out.push(format!("sigma must be {SIGMA}"));
        }
        if !self.graph.is_consistent() {
            out.push("adjacency is not symmetric".to_string());
        }
        out
    }
}

/// How attempting nodes that lose a contention are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CollisionMode {
    /// Colliders keep a zero timer and contend again next slot.
    #[default]
    #[serde(rename = "timer-rule")]
    TimerRule,
    /// Colliders occupy the channel for `T` slots without success.
    #[serde(rename = "hold-T")]
    HoldT,
}

impl CollisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CollisionMode::TimerRule => "timer-rule",
            CollisionMode::HoldT => "hold-T",
        }
    }
}

impl fmt::Display for CollisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CollisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timer-rule" | "timer" => Ok(CollisionMode::TimerRule),
            "hold-T" | "hold-t" | "hold" => Ok(CollisionMode::HoldT),
            other => Err(Error::param(format!("unknown collision mode {other:?}"))),
        }
    }
}
