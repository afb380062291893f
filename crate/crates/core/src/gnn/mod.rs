//! Message-passing throughput predictors.
//!
//! A model stacks `num_layers` message-passing layers of one kind
//! ([`LayerKind`]) and finishes with a per-node MLP head ending in a
//! logistic sigmoid, so every prediction lies in `(0, 1)`.
//!
//! Parameters live in [`ModelParameters`], an ordered list of named
//! matrices whose order and shapes are fixed by the [`ModelConfig`]; the
//! same order defines the flat-vector view used by optimizers and the
//! checkpoint format.

mod checkpoint;
mod infer;
mod layers;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use infer::infer;
pub use layers::{gcn_coefficients, GraphInput};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::NetworkInstance;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Sage,
    Gin,
    Gine,
    Dgcn,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gin, LayerKind::Gine, LayerKind::Dgcn];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Sage => "sage",
            LayerKind::Gin => "gin",
            LayerKind::Gine => "gine",
            LayerKind::Dgcn => "dgcn",
        }
    }

    /// Update rule of one layer, as recorded in training reports.
    pub fn update_rule(self) -> &'static str {
        match self {
            LayerKind::Gcn => "ReLU(D^-1/2 (A+I) D^-1/2 H W), no bias",
            LayerKind::Sage => "ReLU(H W_self + mean_N(v)(H) W_neigh), no bias",
            LayerKind::Gin => "ReLU(MLP((1+eps) h_v + sum_N(v) h_u))",
            LayerKind::Gine => "ReLU(MLP((1+eps) h_v + sum_N(v) ReLU(h_u + W_e + b_e)))",
            LayerKind::Dgcn => "ReLU(h_v W_self + sum_N(v) sigmoid(a.z_u) ReLU(z_u) + b), z = H W_nbr",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::param(format!("unknown architecture {s:?}")))
    }
}

/// Node input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum FeatureMode {
    /// `x_i = [p_i]`
    #[default]
    #[serde(rename = "p")]
    P,
    /// `x_i = [p_i, T]`
    #[serde(rename = "pT")]
    PT,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::P => 1,
            FeatureMode::PT => 2,
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(FeatureMode::P),
            "pT" | "pt" | "p-and-T" => Ok(FeatureMode::PT),
            other => Err(Error::param(format!("unknown feature mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_kind: LayerKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Head widths, starting at `hidden_dim` and ending at 1.
    pub head_dims: Vec<usize>,
    pub feature_mode: FeatureMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(LayerKind::Dgcn)
    }
}

impl ModelConfig {
    /// Eight layers of width 64 and a `64 → 32 → 1` head.
    pub fn new(layer_kind: LayerKind) -> Self {
        Self {
            layer_kind,
            num_layers: 8,
            hidden_dim: 64,
            head_dims: vec![64, 32, 1],
            feature_mode: FeatureMode::P,
            seed: 0,
        }
    }

    /// Same kind and features with a custom size; the head becomes
    /// `hidden → hidden/2 → 1`.
    pub fn sized(layer_kind: LayerKind, num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            num_layers,
            hidden_dim,
            head_dims: vec![hidden_dim, (hidden_dim / 2).max(1), 1],
            ..Self::new(layer_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.num_layers < 1 {
            v.push("num_layers must be ≥ 1".to_string());
        }
        if self.hidden_dim < 1 {
            v.push("hidden_dim must be ≥ 1".to_string());
        }
        if self.head_dims.len() < 2 {
            v.push("head needs at least input and output widths".to_string());
        }
        if self.head_dims.first() != Some(&self.hidden_dim) {
            v.push("head input width must equal hidden_dim".to_string());
        }
        if self.head_dims.last() != Some(&1) {
            v.push("head output width must be 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Names and shapes of every parameter matrix, in storage order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let h = self.hidden_dim;
        let mut out = Vec::new();
        for l in 0..self.num_layers {
            let d = if l == 0 { self.feature_mode.dim() } else { h };
            let mut push = |name: &str, shape| out.push((format!("layer{l}.{name}"), shape));
            match self.layer_kind {
                LayerKind::Gcn => push("w", (d, h)),
                LayerKind::Sage => {
                    push("w_self", (d, h));
                    push("w_neigh", (d, h));
                }
                LayerKind::Gin | LayerKind::Gine => {
                    push("eps", (1, 1));
                    push("mlp_w1", (d, h));
                    push("mlp_b1", (1, h));
                    push("mlp_w2", (h, h));
                    push("mlp_b2", (1, h));
                    if self.layer_kind == LayerKind::Gine {
                        push("w_e", (1, d));
                        push("b_e", (1, d));
                    }
                }
                LayerKind::Dgcn => {
                    push("w_self", (d, h));
                    push("w_nbr", (d, h));
                    push("a", (h, 1));
                    push("b", (1, h));
                }
            }
        }
        for (k, w) in self.head_dims.windows(2).enumerate() {
            out.push((format!("head{k}.w"), (w[0], w[1])));
            out.push((format!("head{k}.b"), (1, w[1])));
        }
        out
    }

    pub fn tensors_per_layer(&self) -> usize {
        match self.layer_kind {
            LayerKind::Gcn => 1,
            LayerKind::Sage => 2,
            LayerKind::Gin => 5,
            LayerKind::Gine => 7,
            LayerKind::Dgcn => 4,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// Learnable weights in [`ModelConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub tensors: Vec<Tensor>,
}

fn is_zero_init(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    matches!(leaf, "a" | "b" | "eps" | "b_e" | "mlp_b1" | "mlp_b2")
}

/// Glorot-uniform weights; biases, attention vectors and `ε` start at zero.
pub fn init_parameters(config: &ModelConfig) -> Result<ModelParameters> {
    config.validate()?;
    let mut rng = rng::seeded(config.seed);
    let tensors = config
        .layout()
        .into_iter()
        .map(|(name, (r, c))| {
            if is_zero_init(&name) {
                Tensor::zeros((r, c))
            } else {
                let limit = (6.0 / (r + c) as f64).sqrt();
                Array2::from_shape_simple_fn((r, c), || rng.random_range(-limit..limit))
            }
        })
        .collect();
    Ok(ModelParameters { tensors })
}

impl ModelParameters {
    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn unflatten(config: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let layout = config.layout();
        let expect: usize = layout.iter().map(|(_, (r, c))| r * c).sum();
        if flat.len() != expect {
            return Err(Error::shape(format!("expected {expect} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        let tensors = layout
            .into_iter()
            .map(|(_, (r, c))| {
                let t = Array2::from_shape_vec((r, c), flat[off..off + r * c].to_vec()).expect("layout shape");
                off += r * c;
                t
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let layout = config.layout();
        if layout.len() != self.tensors.len()
            || layout.iter().zip(&self.tensors).any(|((_, s), t)| t.dim() != *s)
        {
            return Err(Error::shape("parameters do not match the model configuration"));
        }
        Ok(())
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Registers every tensor as a constant leaf.
    pub fn register_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }
}

/// Feature matrix for the given probabilities and duration.
pub fn node_features(p: &[f64], t: usize, mode: FeatureMode) -> Result<Tensor> {
    if p.is_empty() {
        return Err(Error::shape("feature matrix needs at least one node"));
    }
    Ok(match mode {
        FeatureMode::P => Array2::from_shape_fn((p.len(), 1), |(i, _)| p[i]),
        FeatureMode::PT => Array2::from_shape_fn((p.len(), 2), |(i, j)| if j == 0 { p[i] } else { t as f64 }),
    })
}

pub fn instance_features(inst: &NetworkInstance, mode: FeatureMode) -> Result<Tensor> {
    node_features(&inst.p, inst.t, mode)
}

/// Records the full forward pass and returns the `N×1` prediction node.
pub fn forward_tape(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &[Var],
    graph: &GraphInput,
    x: Var,
) -> Result<Var> {
    if params.len() != config.layout().len() {
        return Err(Error::shape("parameter list does not match the configuration"));
    }
    let per = config.tensors_per_layer();
    let mut h = x;
    for l in 0..config.num_layers {
        let w = &params[l * per..(l + 1) * per];
        h = match config.layer_kind {
            LayerKind::Gcn => layers::gcn_layer(tape, h, graph, w[0])?,
            LayerKind::Sage => layers::sage_layer(tape, h, graph, w[0], w[1])?,
            LayerKind::Gin => layers::gin_layer(tape, h, graph, &layers::GinWeights::from_slice(w))?,
            LayerKind::Gine => {
                let gin = layers::GinWeights::from_slice(w);
                layers::gine_layer(tape, h, graph, &gin, w[5], w[6])?
            }
            LayerKind::Dgcn => layers::dgcn_layer(tape, h, graph, &layers::DgcnWeights::from_slice(w))?,
        };
    }
    let head = &params[config.num_layers * per..];
    layers::mlp_head(tape, h, head)
}

/// A configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Model {
    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = init_parameters(&config)?;
        Ok(Self { config, params })
    }

    pub fn new(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    /// Per-node predictions in `(0, 1)`.
    pub fn predict(&self, inst: &NetworkInstance) -> Result<Vec<f64>> {
        forward(&self.config, &self.params, inst)
    }
}

/// Per-node throughput predictions for one instance.
pub fn forward(config: &ModelConfig, params: &ModelParameters, inst: &NetworkInstance) -> Result<Vec<f64>> {
    let x = instance_features(inst, config.feature_mode)?;
    let y = infer(config, params, &GraphInput::from_graph(&inst.graph), &x)?;
    Ok(y.column(0).to_vec())
}

/// Same as [`forward`], recorded on a tape.
pub fn forward_recorded(config: &ModelConfig, params: &ModelParameters, inst: &NetworkInstance) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let x = tape.constant(instance_features(inst, config.feature_mode)?);
    let graph = GraphInput::from_graph(&inst.graph);
    let y = forward_tape(&mut tape, config, &vars, &graph, x)?;
    Ok(tape.value(y).column(0).to_vec())
}

/// Prediction plus `∂(Σ_i w_i log(Θ̂_i + eps)) / ∂p` for the input column.
pub fn log_utility_input_gradient(
    model: &Model,
    inst: &NetworkInstance,
    alpha: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let n = inst.n();
    if alpha.len() != n {
        return Err(Error::shape("alpha length does not match the graph"));
    }
    let mut tape = Tape::new();
    let vars = model.params.register_frozen(&mut tape);
    let x = tape.param(instance_features(inst, model.config.feature_mode)?);
    let graph = GraphInput::from_graph(&inst.graph);
    let y = forward_tape(&mut tape, &model.config, &vars, &graph, x)?;
    let logs = tape.log_eps(y, eps)?;
    let a = tape.constant(Array2::from_shape_vec((1, n), alpha.to_vec()).expect("row"));
    let j = tape.matmul(a, logs)?;
    let grads = tape.backward(j)?;
    let gx = grads.wrt(x);
    Ok((tape.value(y).column(0).to_vec(), tape.scalar(j), gx.column(0).to_vec()))
}

/// Output of layer `layer` alone applied to `h`.
pub fn apply_layer(
    config: &ModelConfig,
    params: &ModelParameters,
    layer: usize,
    graph: &GraphInput,
    h: &Tensor,
) -> Result<Tensor> {
    if layer >= config.num_layers {
        return Err(Error::param(format!("layer {layer} of {}", config.num_layers)));
    }
    let per = config.tensors_per_layer();
    let single = ModelConfig { num_layers: 1, ..config.clone() };
    let mut tape = Tape::new();
    let w: Vec<Var> = params.tensors[layer * per..(layer + 1) * per]
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let x = tape.constant(h.clone());
    let out = match single.layer_kind {
        LayerKind::Gcn => layers::gcn_layer(&mut tape, x, graph, w[0])?,
        LayerKind::Sage => layers::sage_layer(&mut tape, x, graph, w[0], w[1])?,
        LayerKind::Gin => layers::gin_layer(&mut tape, x, graph, &layers::GinWeights::from_slice(&w))?,
        LayerKind::Gine => {
            layers::gine_layer(&mut tape, x, graph, &layers::GinWeights::from_slice(&w), w[5], w[6])?
        }
        LayerKind::Dgcn => layers::dgcn_layer(&mut tape, x, graph, &layers::DgcnWeights::from_slice(&w))?,
    };
    Ok(tape.value(out).clone())
}

/// Neighbor term `Σ_{u ∈ N(v)} sigmoid(aᵀ z_u) ReLU(z_u)` of a decoupled
/// layer with `z = H W_nbr`.
pub fn dgcn_neighbor_term(h: &Tensor, graph: &GraphInput, w_nbr: &Tensor, a: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let (r, c) = w_nbr.dim();
    let w = layers::DgcnWeights {
        w_self: tape.constant(Tensor::zeros((r, c))),
        w_nbr: tape.constant(w_nbr.clone()),
        a: tape.constant(a.clone()),
        b: tape.constant(Tensor::zeros((1, c))),
    };
    let (_, nb) = layers::dgcn_channels(&mut tape, x, graph, &w)?;
    Ok(tape.value(nb).clone())
}
