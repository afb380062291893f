//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are
//! created with [`Tape::param`] (differentiable) or [`Tape::constant`];
//! every other method appends a node and returns its [`Var`] handle.
//! [`Tape::backward`] walks the tape once in reverse and returns the
//! gradient of a scalar loss with respect to every differentiable leaf.
//!
//! ```
//! use ndarray::array;
//! use pcsma::diff::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(array![[1.0, -2.0], [3.0, 4.0]]);
//! let loss = tape.sum(w).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w), array![[1.0, 1.0], [1.0, 1.0]]);
//! ```
//!
//! Graph aggregation uses [`EdgeList`], a list of directed pairs `u → v`
//! holding both orientations of every undirected edge, so that
//! `scatter_add_edges` computes `Σ_{u ∈ N(v)} z_u` row by row.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::graph::ConflictGraph;

pub type Tensor = Array2<f64>;

/// Directed edge list over `n` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub n: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeList {
    /// Both orientations of every edge, ordered by target node then source.
    pub fn from_graph(g: &ConflictGraph) -> Self {
        let mut src = Vec::with_capacity(2 * g.edge_count());
        let mut dst = Vec::with_capacity(2 * g.edge_count());
        for (v, nbrs) in g.neighbor_lists().iter().enumerate() {
            for &u in nbrs {
                src.push(u);
                dst.push(v);
            }
        }
        Self { n: g.n(), src, dst }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Adds `v → v` for every node.
    pub fn with_self_loops(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.n {
            out.src.push(v);
            out.dst.push(v);
        }
        out
    }

    /// Disjoint union; node ids of later lists are shifted.
    pub fn concat<'a>(lists: impl IntoIterator<Item = &'a EdgeList>) -> Self {
        let mut out = EdgeList { n: 0, src: Vec::new(), dst: Vec::new() };
        for l in lists {
            out.src.extend(l.src.iter().map(|u| u + out.n));
            out.dst.extend(l.dst.iter().map(|v| v + out.n));
            out.n += l.n;
        }
        out
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Second operand is either the same shape or a single broadcast row.
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    LogEps(Var, f64),
    ScalarMul(Var, f64),
    /// Elementwise scale by a 1×1 node.
    ScaleBy(Var, Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    WeightedSse(Var, Var, Arc<Tensor>),
    ScatterAddEdges(Var, Arc<EdgeList>),
    WeightedScatterAdd(Var, Var, Arc<EdgeList>),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterRows(Var, Arc<Vec<usize>>),
    Column(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients of one backward pass. Interior gradients are released
/// during the reverse walk.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not affect the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn shape(t: &Tensor) -> (usize, usize) {
    t.dim()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != rb {
            return Err(Error::shape(format!("matmul: ({ra}, {ca}) x ({rb}, {cb})")));
        }
        let v = self.value(a).dot(self.value(b));
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    fn broadcast_check(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb || (sb.0 == 1 && sb.1 == sa.1) {
            Ok(())
        } else {
            Err(Error::shape(format!("{name}: {sa:?} and {sb:?} are incompatible")))
        }
    }

    /// `a + b`, with `b` either the same shape or a row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    /// `a - b`, broadcasting like [`Tape::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    /// `log(a + eps)`.
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Result<Var> {
        let v = self.value(a).mapv(|x| (x + eps).ln());
        self.push("log", v, Op::LogEps(a, eps), &[a])
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) * c;
        self.push("scalar_mul", v, Op::ScalarMul(a, c), &[a])
    }

    /// Multiplies every entry of `a` by the 1×1 node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::shape(format!("scale_by: factor has shape {:?}", self.shape(s))));
        }
        let v = self.value(a) * self.scalar(s);
        self.push("scale_by", v, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let v = Tensor::from_elem((1, 1), t.sum() / t.len() as f64);
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st || self.value(pred).is_empty() {
            return Err(Error::shape(format!("mse: {sp:?} vs {st:?}")));
        }
        let d = self.value(pred) - self.value(target);
        let v = Tensor::from_elem((1, 1), d.mapv(|x| x * x).sum() / d.len() as f64);
        self.push("mse", v, Op::Mse(pred, target), &[pred, target])
    }

    /// `Σ w ⊙ (pred − target)²` with constant weights.
    pub fn weighted_sse(&mut self, pred: Var, target: Var, weights: Arc<Tensor>) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st || sp != shape(&weights) {
            return Err(Error::shape(format!(
                "weighted_sse: {sp:?} vs {st:?} vs {:?}",
                shape(&weights)
            )));
        }
        let d = self.value(pred) - self.value(target);
        let v = Tensor::from_elem((1, 1), (&d * &d * &*weights).sum());
        self.push("weighted_sse", v, Op::WeightedSse(pred, target, weights), &[pred, target])
    }

    /// Row `v` of the result is `Σ_{(u→v)} z_u`.
    pub fn scatter_add_edges(&mut self, z: Var, edges: Arc<EdgeList>) -> Result<Var> {
        let (r, c) = self.shape(z);
        if r != edges.n {
            return Err(Error::shape(format!("scatter_add_edges: {r} rows for {} nodes", edges.n)));
        }
        let zv = self.value(z);
        let mut out = Tensor::zeros((r, c));
        for (&u, &v) in edges.src.iter().zip(&edges.dst) {
            let mut row = out.row_mut(v);
            row += &zv.row(u);
        }
        self.push("scatter_add_edges", out, Op::ScatterAddEdges(z, edges), &[z])
    }

    /// Row `v` of the result is `Σ_e w_e z_{src(e)}` over edges `e` into `v`;
    /// `w` is an `E×1` column.
    pub fn weighted_scatter_add(&mut self, z: Var, w: Var, edges: Arc<EdgeList>) -> Result<Var> {
        let (r, c) = self.shape(z);
        if r != edges.n || self.shape(w) != (edges.len(), 1) {
            return Err(Error::shape(format!(
                "weighted_scatter_add: z {:?}, w {:?}, {} nodes, {} edges",
                (r, c),
                self.shape(w),
                edges.n,
                edges.len()
            )));
        }
        let zv = self.value(z);
        let wv = self.value(w);
        let mut out = Tensor::zeros((r, c));
        for (e, (&u, &v)) in edges.src.iter().zip(&edges.dst).enumerate() {
            out.row_mut(v).scaled_add(wv[[e, 0]], &zv.row(u));
        }
        self.push("weighted_scatter_add", out, Op::WeightedScatterAdd(z, w, edges), &[z, w])
    }

    /// Output row `k` is input row `idx[k]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let (r, _) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(format!("gather_rows: index {bad} out of {r} rows")));
        }
        let v = self.value(a).select(Axis(0), &idx);
        self.push("gather_rows", v, Op::GatherRows(a, idx), &[a])
    }

    /// Output row `idx[k]` accumulates input row `k`; output has `rows` rows.
    pub fn scatter_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.len() != r || idx.iter().any(|&i| i >= rows) {
            return Err(Error::shape(format!("scatter_rows: {r} rows, {} indices, {rows} targets", idx.len())));
        }
        let av = self.value(a);
        let mut out = Tensor::zeros((rows, c));
        for (k, &i) in idx.iter().enumerate() {
            let mut row = out.row_mut(i);
            row += &av.row(k);
        }
        self.push("scatter_rows", out, Op::ScatterRows(a, idx), &[a])
    }

    /// Column `j` of `a` as an `n×1` node.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if j >= c {
            return Err(Error::shape(format!("column {j} of a ({r}, {c}) tensor")));
        }
        let v = self.value(a).column(j).to_owned().insert_axis(Axis(1));
        self.push("column", v, Op::Column(a, j), &[a])
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(format!("loss must be 1x1, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.needs(*b) {
                        let gb = if self.shape(*b) == shape(&g) {
                            &g * sign
                        } else {
                            g.sum_axis(Axis(0)).insert_axis(Axis(0)) * sign
                        };
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.needs(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::LogEps(a, eps) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| *d /= x + eps);
                    self.acc(&mut grads, *a, ga);
                }
                Op::ScalarMul(a, c) => self.acc(&mut grads, *a, g * *c),
                Op::ScaleBy(a, s) => {
                    if self.needs(*s) {
                        let gs = (&g * self.value(*a)).sum();
                        self.acc(&mut grads, *s, Tensor::from_elem((1, 1), gs));
                    }
                    if self.needs(*a) {
                        let f = self.scalar(*s);
                        self.acc(&mut grads, *a, g * f);
                    }
                }
                Op::Sum(a) => {
                    let ga = Tensor::from_elem(self.shape(*a), g[[0, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let sh = self.shape(*a);
                    let ga = Tensor::from_elem(sh, g[[0, 0]] / (sh.0 * sh.1) as f64);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Mse(p, t) => {
                    let d = self.value(*p) - self.value(*t);
                    let k = 2.0 * g[[0, 0]] / d.len() as f64;
                    if self.needs(*t) {
                        self.acc(&mut grads, *t, &d * -k);
                    }
                    if self.needs(*p) {
                        self.acc(&mut grads, *p, d * k);
                    }
                }
                Op::WeightedSse(p, t, w) => {
                    let d = (self.value(*p) - self.value(*t)) * &**w * (2.0 * g[[0, 0]]);
                    if self.needs(*t) {
                        self.acc(&mut grads, *t, -&d);
                    }
                    if self.needs(*p) {
                        self.acc(&mut grads, *p, d);
                    }
                }
                Op::ScatterAddEdges(z, edges) => {
                    let mut gz = Tensor::zeros(self.shape(*z));
                    for (&u, &v) in edges.src.iter().zip(&edges.dst) {
                        let mut row = gz.row_mut(u);
                        row += &g.row(v);
                    }
                    self.acc(&mut grads, *z, gz);
                }
                Op::WeightedScatterAdd(z, w, edges) => {
                    let zv = self.value(*z);
                    let wv = self.value(*w);
                    if self.needs(*w) {
                        let mut gw = Tensor::zeros((edges.len(), 1));
                        for (e, (&u, &v)) in edges.src.iter().zip(&edges.dst).enumerate() {
                            gw[[e, 0]] = g.row(v).dot(&zv.row(u));
                        }
                        self.acc(&mut grads, *w, gw);
                    }
                    if self.needs(*z) {
                        let mut gz = Tensor::zeros(self.shape(*z));
                        for (e, (&u, &v)) in edges.src.iter().zip(&edges.dst).enumerate() {
                            gz.row_mut(u).scaled_add(wv[[e, 0]], &g.row(v));
                        }
                        self.acc(&mut grads, *z, gz);
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Tensor::zeros(self.shape(*a));
                    for (k, &i) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(i);
                        row += &g.row(k);
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::ScatterRows(a, idx) => {
                    let ga = g.select(Axis(0), idx);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Column(a, j) => {
                    let mut ga = Tensor::zeros(self.shape(*a));
                    ga.column_mut(*j).assign(&g.column(0));
                    self.acc(&mut grads, *a, ga);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| shape(&n.value)).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Central-difference gradient check.
///
/// `f` builds a scalar loss on a fresh tape from leaf parameters holding
/// the given values. Every coordinate of every parameter is perturbed by
/// `±h`; the result is the largest relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_coords(f, params, h, None)
}

/// Denominator floor of [`grad_check`]; keeps the measure finite for
/// vanishing gradients.
pub const REL_FLOOR: f64 = 1e-3;

/// Like [`grad_check`], restricted to the listed `(param, flat index)`
/// coordinates when `coords` is given.
pub fn grad_check_coords<F>(f: F, params: &[Tensor], h: f64, coords: Option<&[(usize, usize)]>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = params
                .iter()
                .enumerate()
                .flat_map(|(k, p)| (0..p.len()).map(move |i| (k, i)))
                .collect();
            &all
        }
    };
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for &(k, i) in coords {
        let cols = params[k].ncols();
        let at = [i / cols, i % cols];
        let orig = params[k][at];
        work[k][at] = orig + h;
        let up = eval(&work)?;
        work[k][at] = orig - h;
        let down = eval(&work)?;
        work[k][at] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k][at];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
