use std::sync::Arc;

use ndarray::Array2;

use crate::diff::{EdgeList, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::ConflictGraph;

/// Graph-side inputs of a forward pass: directed edges plus the constant
/// aggregation weights used by the normalized layers. Several graphs can
/// be merged into one disjoint union with [`GraphInput::union`].
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub n: usize,
    pub edges: Arc<EdgeList>,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    /// Edges plus one self-loop per node.
    pub gcn_edges: Arc<EdgeList>,
    /// `1 / sqrt(d̃_u d̃_v)` per entry of `gcn_edges`.
    pub gcn_weights: Tensor,
    /// `1 / deg(v)` per edge `u → v`.
    pub mean_weights: Tensor,
    /// Node offset of each member graph; the last entry is `n`.
    pub offsets: Vec<usize>,
}

/// Entries of `D̃^{-1/2} (A + I) D̃^{-1/2}` in `EdgeList::with_self_loops` order.
pub fn gcn_coefficients(g: &ConflictGraph) -> Vec<f64> {
    let el = EdgeList::from_graph(g).with_self_loops();
    let deg: Vec<f64> = (0..g.n()).map(|v| g.degree(v) as f64 + 1.0).collect();
    el.src.iter().zip(&el.dst).map(|(&u, &v)| 1.0 / (deg[u] * deg[v]).sqrt()).collect()
}

fn column(v: Vec<f64>) -> Tensor {
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

impl GraphInput {
    pub fn from_graph(g: &ConflictGraph) -> Self {
        let edges = EdgeList::from_graph(g);
        let mean = edges.dst.iter().map(|&v| 1.0 / g.degree(v) as f64).collect();
        Self {
            n: g.n(),
            src: Arc::new(edges.src.clone()),
            dst: Arc::new(edges.dst.clone()),
            gcn_edges: Arc::new(edges.with_self_loops()),
            gcn_weights: column(gcn_coefficients(g)),
            mean_weights: column(mean),
            edges: Arc::new(edges),
            offsets: vec![0, g.n()],
        }
    }

    pub fn graph_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn union(parts: &[&GraphInput]) -> Self {
        let edges = EdgeList::concat(parts.iter().map(|p| &*p.edges));
        let gcn_edges = EdgeList::concat(parts.iter().map(|p| &*p.gcn_edges));
        let cat = |f: fn(&GraphInput) -> &Tensor| {
            column(parts.iter().flat_map(|p| f(p).iter().copied()).collect())
        };
        let mut offsets = vec![0];
        for p in parts {
            offsets.push(offsets.last().unwrap() + p.n);
        }
        Self {
            n: edges.n,
            src: Arc::new(edges.src.clone()),
            dst: Arc::new(edges.dst.clone()),
            gcn_weights: cat(|p| &p.gcn_weights),
            mean_weights: cat(|p| &p.mean_weights),
            gcn_edges: Arc::new(gcn_edges),
            edges: Arc::new(edges),
            offsets,
        }
    }
}

fn check_rows(tape: &Tape, h: Var, g: &GraphInput) -> Result<()> {
    let (r, _) = tape.shape(h);
    if r != g.n {
        return Err(Error::shape(format!("features have {r} rows for {} nodes", g.n)));
    }
    Ok(())
}

/// `ReLU(D̃^{-1/2} Ã D̃^{-1/2} H W)` with `Ã = A + I`, no bias.
pub(crate) fn gcn_layer(tape: &mut Tape, h: Var, g: &GraphInput, w: Var) -> Result<Var> {
    check_rows(tape, h, g)?;
    let hw = tape.matmul(h, w)?;
    let c = tape.constant(g.gcn_weights.clone());
    let agg = tape.weighted_scatter_add(hw, c, g.gcn_edges.clone())?;
    tape.relu(agg)
}

/// `ReLU(H W_self + mean_{u ∈ N(v)} h_u W_neigh)`; isolated nodes see a
/// zero neighbor mean.
pub(crate) fn sage_layer(tape: &mut Tape, h: Var, g: &GraphInput, w_self: Var, w_neigh: Var) -> Result<Var> {
    check_rows(tape, h, g)?;
    let own = tape.matmul(h, w_self)?;
    let c = tape.constant(g.mean_weights.clone());
    let mean = tape.weighted_scatter_add(h, c, g.edges.clone())?;
    let nb = tape.matmul(mean, w_neigh)?;
    let pre = tape.add(own, nb)?;
    tape.relu(pre)
}

pub(crate) struct GinWeights {
    pub eps: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl GinWeights {
    pub fn from_slice(w: &[Var]) -> Self {
        Self { eps: w[0], w1: w[1], b1: w[2], w2: w[3], b2: w[4] }
    }
}

fn gin_update(tape: &mut Tape, h: Var, agg: Var, w: &GinWeights) -> Result<Var> {
    let scaled = tape.scale_by(h, w.eps)?;
    let own = tape.add(h, scaled)?;
    let pre = tape.add(own, agg)?;
    let a = tape.matmul(pre, w.w1)?;
    let a = tape.add(a, w.b1)?;
    let a = tape.relu(a)?;
    let b = tape.matmul(a, w.w2)?;
    let b = tape.add(b, w.b2)?;
    tape.relu(b)
}

/// `ReLU(MLP((1 + ε) h_v + Σ_{u ∈ N(v)} h_u))`.
pub(crate) fn gin_layer(tape: &mut Tape, h: Var, g: &GraphInput, w: &GinWeights) -> Result<Var> {
    check_rows(tape, h, g)?;
    let agg = tape.scatter_add_edges(h, g.edges.clone())?;
    gin_update(tape, h, agg, w)
}

/// GIN with per-neighbor messages `ReLU(h_u + φ)`, where every conflict
/// edge carries the attribute 1 so `φ = W_e + b_e` is one shared row.
pub(crate) fn gine_layer(
    tape: &mut Tape,
    h: Var,
    g: &GraphInput,
    w: &GinWeights,
    w_e: Var,
    b_e: Var,
) -> Result<Var> {
    check_rows(tape, h, g)?;
    let phi = tape.add(w_e, b_e)?;
    let from = tape.gather_rows(h, g.src.clone())?;
    let msg = tape.add(from, phi)?;
    let msg = tape.relu(msg)?;
    let agg = tape.scatter_rows(msg, g.dst.clone(), g.n)?;
    gin_update(tape, h, agg, w)
}

pub(crate) struct DgcnWeights {
    pub w_self: Var,
    pub w_nbr: Var,
    pub a: Var,
    pub b: Var,
}

impl DgcnWeights {
    pub fn from_slice(w: &[Var]) -> Self {
        Self { w_self: w[0], w_nbr: w[1], a: w[2], b: w[3] }
    }
}

/// Decoupled layer:
///
/// ```text
/// z_u   = h_u W_nbr
/// α_uv  = sigmoid(aᵀ z_u)
/// h_v'  = ReLU(h_v W_self + Σ_{u ∈ N(v)} α_uv ReLU(z_u) + b)
/// ```
///
/// The neighbor sum is not normalized by degree.
pub(crate) fn dgcn_layer(tape: &mut Tape, h: Var, g: &GraphInput, w: &DgcnWeights) -> Result<Var> {
    let (own, nb) = dgcn_channels(tape, h, g, w)?;
    let pre = tape.add(own, nb)?;
    let pre = tape.add(pre, w.b)?;
    tape.relu(pre)
}

/// Self channel `H W_self` and neighbor term `Σ α_uv ReLU(z_u)` of a
/// decoupled layer, before bias and activation.
pub(crate) fn dgcn_channels(tape: &mut Tape, h: Var, g: &GraphInput, w: &DgcnWeights) -> Result<(Var, Var)> {
    check_rows(tape, h, g)?;
    let own = tape.matmul(h, w.w_self)?;
    let z = tape.matmul(h, w.w_nbr)?;
    let logits = tape.matmul(z, w.a)?;
    let att = tape.sigmoid(logits)?;
    let alpha = tape.gather_rows(att, g.src.clone())?;
    let rz = tape.relu(z)?;
    let nb = tape.weighted_scatter_add(rz, alpha, g.edges.clone())?;
    Ok((own, nb))
}

/// Dense layers with ReLU between them and a logistic sigmoid at the end.
pub(crate) fn mlp_head(tape: &mut Tape, h: Var, weights: &[Var]) -> Result<Var> {
    if weights.len() % 2 != 0 || weights.is_empty() {
        return Err(Error::shape("head weights come in (w, b) pairs"));
    }
    let layers = weights.len() / 2;
    let mut x = h;
    for k in 0..layers {
        x = tape.matmul(x, weights[2 * k])?;
        x = tape.add(x, weights[2 * k + 1])?;
        x = if k + 1 < layers { tape.relu(x)? } else { tape.sigmoid(x)? };
    }
    Ok(x)
}
