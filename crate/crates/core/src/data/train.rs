use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetRow;
use super::metrics::{metrics, Metrics};
use super::optim::{clip_global_norm, AdamW, Plateau};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::gnn::{self, forward_tape, GraphInput, Model, ModelConfig, ModelParameters};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    /// Relative improvement the validation loss must make to count.
    pub plateau_threshold: f64,
    pub max_epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    /// Training stops once the learning rate drops below this.
    pub min_lr: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Each batch is split into this many shards whose gradients are
    /// computed in parallel and summed in shard order. The result depends
    /// on the shard count but not on the thread count.
    pub shards: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            plateau_factor: 0.5,
            patience: 5,
            plateau_threshold: 1e-6,
            max_epochs: 200,
            batch_size: 32,
            min_lr: 1e-5,
            seed: 0,
            shards: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelConfig,
    pub update_rule: String,
    pub hyper: TrainConfig,
    pub train_rows: usize,
    pub val_rows: usize,
    pub epochs: Vec<EpochRecord>,
    pub lr_trace: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: String,
    pub test: Option<Metrics>,
    pub wall_time_s: f64,
}

/// Graph inputs, features and targets of one row.
pub struct Prepared {
    pub graph: GraphInput,
    pub x: Tensor,
    pub y: Vec<f64>,
}

pub fn prepare(config: &ModelConfig, rows: &[DatasetRow]) -> Result<Vec<Prepared>> {
    rows.iter()
        .map(|r| {
            Ok(Prepared {
                graph: GraphInput::from_graph(&r.graph),
                x: gnn::node_features(&r.p, r.t, config.feature_mode)?,
                y: r.theta.clone(),
            })
        })
        .collect()
}

fn check_homogeneous(rows: &[&DatasetRow]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut v = Vec::new();
    if rows.iter().any(|r| r.label_source != first.label_source) {
        v.push("dataset mixes sim- and mc-labeled rows".to_string());
    }
    if rows.iter().any(|r| r.collision_mode != first.collision_mode) {
        v.push("dataset mixes collision modes".to_string());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

/// Loss `Σ_g (1/B) mean_i (ŷ_i − y_i)²` over `items` and its gradient in
/// flat parameter order, where `B = denom` graphs make up the full batch.
pub fn batch_loss_grad(
    config: &ModelConfig,
    params: &ModelParameters,
    items: &[&Prepared],
    denom: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let graph = GraphInput::union(&items.iter().map(|p| &p.graph).collect::<Vec<_>>());
    let xs: Vec<_> = items.iter().map(|p| p.x.view()).collect();
    let x = tape.constant(concatenate(Axis(0), &xs).map_err(|e| Error::shape(e.to_string()))?);
    let ys: Vec<f64> = items.iter().flat_map(|p| p.y.iter().copied()).collect();
    let w: Vec<f64> = items
        .iter()
        .flat_map(|p| std::iter::repeat_n(1.0 / (denom * p.y.len()) as f64, p.y.len()))
        .collect();
    let n = ys.len();
    let target = tape.constant(Tensor::from_shape_vec((n, 1), ys).expect("column"));
    let pred = forward_tape(&mut tape, config, &vars, &graph, x)?;
    let loss = tape.weighted_sse(pred, target, Arc::new(Tensor::from_shape_vec((n, 1), w).expect("column")))?;
    let grads = tape.backward(loss)?;
    let flat = vars.iter().flat_map(|&v| grads.wrt(v).into_iter()).collect();
    Ok((tape.scalar(loss), flat))
}

/// Mean over graphs of the per-graph node MSE.
pub fn graph_mean_loss(model: &Model, items: &[Prepared]) -> Result<f64> {
    if items.is_empty() {
        return Ok(f64::NAN);
    }
    let per: Vec<f64> = items
        .par_iter()
        .map(|p| {
            let y = predict_prepared(model, p)?;
            Ok(y.iter().zip(&p.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn predict_prepared(model: &Model, p: &Prepared) -> Result<Vec<f64>> {
    Ok(gnn::infer(&model.config, &model.params, &p.graph, &p.x)?.column(0).to_vec())
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

pub fn train(
    config: &ModelConfig,
    train_rows: &[DatasetRow],
    val_rows: &[DatasetRow],
    hyper: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    train_with(Model::init(config.clone())?, train_rows, val_rows, hyper, |_| {})
}

/// Trains from `model`'s current weights; `on_epoch` sees every record.
/// Returns the parameters with the lowest validation loss, or the lowest
/// training loss when the validation set is empty.
pub fn train_with(
    model: Model,
    train_rows: &[DatasetRow],
    val_rows: &[DatasetRow],
    hyper: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainReport)> {
    let started = Instant::now();
    if train_rows.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if hyper.batch_size == 0 || hyper.shards == 0 {
        return Err(Error::param("batch_size and shards must be ≥ 1"));
    }
    check_homogeneous(&train_rows.iter().chain(val_rows).collect::<Vec<_>>())?;
    let config = model.config.clone();
    let train_set = prepare(&config, train_rows)?;
    let val_set = prepare(&config, val_rows)?;

    let mut flat = model.params.flatten();
    let mut current = model;
    let mut opt = AdamW::new(flat.len(), hyper.lr, hyper.weight_decay);
    let mut sched = Plateau::new(hyper.plateau_factor, hyper.patience, hyper.plateau_threshold);
    let mut lr = hyper.lr;
    let mut best = (f64::INFINITY, 0usize, current.params.clone());
    let mut epochs = Vec::new();
    let mut stop_reason = format!("reached max_epochs={}", hyper.max_epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng::child(hyper.seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let denom = items.len();
            let (loss, mut grad) = if hyper.shards == 1 {
                batch_loss_grad(&config, &current.params, &items, denom)
            } else {
                let size = denom.div_ceil(hyper.shards);
                let parts: Vec<(f64, Vec<f64>)> = items
                    .par_chunks(size)
                    .map(|s| batch_loss_grad(&config, &current.params, s, denom))
                    .collect::<Result<_>>()?;
                let mut total = (0.0, vec![0.0; flat.len()]);
                for (l, g) in parts {
                    total.0 += l;
                    total.1.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Ok(total)
            }
            .map_err(|e| with_context(e, epoch, b))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: non-finite loss {loss}")));
            }
            clip_global_norm(&mut grad, hyper.clip_norm);
            opt.lr = lr;
            opt.step(&mut flat, &grad);
            current.params = ModelParameters::unflatten(&config, &flat)?;
            epoch_loss += loss * denom as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() { train_loss } else { graph_mean_loss(&current, &val_set)? };
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: non-finite validation loss")));
        }
        let rec = EpochRecord { epoch, train_loss, val_loss, lr };
        on_epoch(&rec);
        epochs.push(rec);
        if val_loss < best.0 {
            best = (val_loss, epoch, current.params.clone());
        }
        lr = sched.step(val_loss, lr);
        if lr < hyper.min_lr {
            stop_reason = format!("learning rate {lr:e} fell below {:e}", hyper.min_lr);
            break;
        }
    }

    let report = TrainReport {
        model: config.clone(),
        update_rule: config.layer_kind.update_rule().to_string(),
        hyper: hyper.clone(),
        train_rows: train_rows.len(),
        val_rows: val_rows.len(),
        lr_trace: epochs.iter().map(|e| e.lr).collect(),
        epochs_run: epochs.len(),
        epochs,
        best_epoch: best.1,
        best_val_loss: best.0,
        stop_reason,
        test: None,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((Model { config, params: best.2 }, report))
}

/// Per-row predictions, computed in parallel and returned in row order.
pub fn predict_rows(model: &Model, rows: &[DatasetRow]) -> Result<Vec<Vec<f64>>> {
    rows.par_iter()
        .map(|r| gnn::forward(&model.config, &model.params, &r.instance()?))
        .collect()
}

/// Pooled node-level metrics of `model` on `rows`.
pub fn evaluate(model: &Model, rows: &[DatasetRow]) -> Result<Metrics> {
    let pred: Vec<f64> = predict_rows(model, rows)?.into_iter().flatten().collect();
    let truth: Vec<f64> = rows.iter().flat_map(|r| r.theta.iter().copied()).collect();
    metrics(&pred, &truth)
}
