//! Tape-free forward pass for inference. It borrows the weights instead
//! of recording them, and is checked against the tape forward in tests.

use ndarray::{Array2, ArrayView2, Axis};

use super::layers::GraphInput;
use super::{LayerKind, ModelConfig, ModelParameters};
use crate::diff::Tensor;
use crate::error::{Error, Result};

fn relu(t: Tensor) -> Tensor {
    t.mapv_into(|v| v.max(0.0))
}

fn sigmoid(t: Tensor) -> Tensor {
    t.mapv_into(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Row `v` of the result is `Σ_{e: u→v} w_e z_u`.
fn scatter(z: ArrayView2<f64>, src: &[usize], dst: &[usize], w: Option<&[f64]>, n: usize) -> Tensor {
    let mut out = Array2::zeros((n, z.ncols()));
    for (e, (&u, &v)) in src.iter().zip(dst).enumerate() {
        let c = w.map_or(1.0, |w| w[e]);
        out.row_mut(v).scaled_add(c, &z.row(u));
    }
    out
}

fn gin_update(h: &Tensor, agg: Tensor, t: &[Tensor]) -> Tensor {
    let pre = h * (1.0 + t[0][[0, 0]]) + agg;
    let a = relu(pre.dot(&t[1]) + &t[2]);
    relu(a.dot(&t[3]) + &t[4])
}

fn layer(kind: LayerKind, t: &[Tensor], g: &GraphInput, h: &Tensor) -> Tensor {
    let (src, dst) = (&g.edges.src[..], &g.edges.dst[..]);
    match kind {
        LayerKind::Gcn => {
            let hw = h.dot(&t[0]);
            let c = g.gcn_weights.as_slice().expect("contiguous column");
            relu(scatter(hw.view(), &g.gcn_edges.src, &g.gcn_edges.dst, Some(c), g.n))
        }
        LayerKind::Sage => {
            let c = g.mean_weights.as_slice().expect("contiguous column");
            let mean = scatter(h.view(), src, dst, Some(c), g.n);
            relu(h.dot(&t[0]) + mean.dot(&t[1]))
        }
        LayerKind::Gin => gin_update(h, scatter(h.view(), src, dst, None, g.n), t),
        LayerKind::Gine => {
            let phi = &t[5] + &t[6];
            let msg = relu(h.select(Axis(0), src) + &phi);
            let mut agg = Array2::zeros(h.dim());
            for (e, &v) in dst.iter().enumerate() {
                agg.row_mut(v).scaled_add(1.0, &msg.row(e));
            }
            gin_update(h, agg, t)
        }
        LayerKind::Dgcn => {
            let z = h.dot(&t[1]);
            let att = sigmoid(z.dot(&t[2]));
            let alpha: Vec<f64> = src.iter().map(|&u| att[[u, 0]]).collect();
            let nb = scatter(relu(z).view(), src, dst, Some(&alpha), g.n);
            relu(h.dot(&t[0]) + nb + &t[3])
        }
    }
}

/// Predictions `N×1` for the feature matrix `x`.
pub fn infer(config: &ModelConfig, params: &ModelParameters, graph: &GraphInput, x: &Tensor) -> Result<Tensor> {
    params.check_against(config)?;
    if x.nrows() != graph.n || x.ncols() != config.feature_mode.dim() {
        return Err(Error::shape(format!(
            "features {:?} for {} nodes with {} columns",
            x.dim(),
            graph.n,
            config.feature_mode.dim()
        )));
    }
    let per = config.tensors_per_layer();
    let mut h = x.clone();
    for l in 0..config.num_layers {
        h = layer(config.layer_kind, &params.tensors[l * per..(l + 1) * per], graph, &h);
    }
    let head = &params.tensors[config.num_layers * per..];
    let k = head.len() / 2;
    for i in 0..k {
        let pre = h.dot(&head[2 * i]) + &head[2 * i + 1];
        h = if i + 1 < k { relu(pre) } else { sigmoid(pre) };
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    Ok(h)
}
