//! Training loop: weighted binary cross-entropy with L2 regularization,
//! exact backpropagation through the forward path, Adam updates, and
//! best-dev-epoch selection. Single-threaded and bit-deterministic for a
//! given seed.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{adjacency_matrix, node_features, predict_relevant};
use super::params::GnnLayer;
use super::{EmbeddingTable, ModelError, ModelParams, QueryGraph, TrainConfig};
use crate::eval::binary_macro_prf;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-step loss (data term plus L2 penalty) during the epoch.
    pub train_loss: f64,
    /// Node-level macro-F1 on the dev set after the epoch, if a dev set
    /// was given.
    pub dev_f1: Option<f64>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch (final epoch when no dev set).
    pub params: ModelParams,
    pub trace: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub warnings: Vec<String>,
}

/// Gradients mirroring [`ModelParams`], flattened in the same order.
struct Gradients {
    layers: Vec<GnnLayer>,
    wq: Array2<f64>,
    bq: Array1<f64>,
    wc: Array1<f64>,
    bc: f64,
}

impl Gradients {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.w1.iter());
            out.extend(layer.w2.iter());
        }
        out.extend(self.wq.iter());
        out.extend(self.bq.iter());
        out.extend(self.wc.iter());
        out.push(self.bc);
        out
    }
}

/// ln(1 + e^x) without overflow; -ln sigmoid(-x).
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Forward {
    /// Post-activation per layer; x[0] is the input features.
    x: Vec<Array2<f64>>,
    /// Pre-activation per layer.
    z: Vec<Array2<f64>>,
    /// Neighbor sums A x[l] per layer.
    ax: Vec<Array2<f64>>,
    qbar: Array1<f64>,
    xq: Array1<f64>,
    logits: Array1<f64>,
    probs: Array1<f64>,
}

fn forward_cached(
    params: &ModelParams,
    x0: Array2<f64>,
    adjacency: &Array2<f64>,
    qbar: Array1<f64>,
) -> Forward {
    let last = params.layers.len() - 1;
    let mut x = vec![x0];
    let mut z = Vec::with_capacity(params.layers.len());
    let mut ax = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let neighbor = adjacency.dot(&x[i]);
        let pre = x[i].dot(&layer.w1) + neighbor.dot(&layer.w2);
        let post = if i == last { pre.clone() } else { pre.mapv(|v| v.max(0.0)) };
        ax.push(neighbor);
        z.push(pre);
        x.push(post);
    }
    let xq = qbar.dot(&params.wq) + &params.bq;
    let node_repr = &x[params.layers.len()];
    let (wc_node, wc_query) = params.wc.view().split_at(Axis(0), node_repr.ncols());
    let logits = node_repr.dot(&wc_node) + xq.dot(&wc_query) + params.bc;
    let probs = logits.mapv(sigmoid);
    Forward { x, z, ax, qbar, xq, logits, probs }
}

/// (node features, adjacency, mean query embedding, labels).
type PreparedInputs = (Array2<f64>, Array2<f64>, Array1<f64>, Vec<u8>);

fn prepared_inputs(
    example: &QueryGraph,
    emb: &EmbeddingTable,
) -> Result<PreparedInputs, ModelError> {
    let labels = example
        .graph
        .labels
        .clone()
        .ok_or_else(|| ModelError::UnlabeledGraph(example.graph.query_id.clone()))?;
    if labels.len() != example.graph.node_count() {
        return Err(ModelError::UnlabeledGraph(example.graph.query_id.clone()));
    }
    let x0 = node_features(&example.graph, emb)?;
    let adjacency = adjacency_matrix(&example.graph);
    let qbar = emb.mean_vector(&example.query_tokens)?;
    Ok((x0, adjacency, qbar, labels))
}

/// Total loss for one graph: mean weighted BCE over its nodes plus
/// `lambda * ||weights||^2`. The numeric path matches the gradients in
/// `loss_and_grads`, which the finite-difference tests rely on.
pub fn graph_loss(
    params: &ModelParams,
    example: &QueryGraph,
    emb: &EmbeddingTable,
    pos_weight: f64,
    lambda: f64,
) -> Result<f64, ModelError> {
    let (x0, adjacency, qbar, labels) = prepared_inputs(example, emb)?;
    let fwd = forward_cached(params, x0, &adjacency, qbar);
    Ok(data_loss(&fwd.logits, &labels, pos_weight) + lambda * params.weight_squared_norm())
}

fn data_loss(logits: &Array1<f64>, labels: &[u8], pos_weight: f64) -> f64 {
    let n = labels.len() as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            if y == 1 {
                pos_weight * softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / n
}

/// Data-term loss and exact gradients for one graph. The L2 term is added
/// at the flat-vector level by the caller.
fn loss_and_grads(
    params: &ModelParams,
    example: &QueryGraph,
    emb: &EmbeddingTable,
    pos_weight: f64,
) -> Result<(f64, Gradients), ModelError> {
    let (x0, adjacency, qbar, labels) = prepared_inputs(example, emb)?;
    let fwd = forward_cached(params, x0, &adjacency, qbar);
    let n = labels.len() as f64;
    let loss = data_loss(&fwd.logits, &labels, pos_weight);

    // dL/dlogit_i = (w y (p - 1) + (1 - y) p) / N.
    let g = Array1::from_iter(fwd.probs.iter().zip(&labels).map(|(&p, &y)| {
        if y == 1 {
            pos_weight * (p - 1.0) / n
        } else {
            p / n
        }
    }));

    let k = params.layers.len();
    let node_repr = &fwd.x[k];
    let node_dim = node_repr.ncols();
    let (wc_node, wc_query) = params.wc.view().split_at(Axis(0), node_dim);

    let g_sum = g.sum();
    let d_wc_node = node_repr.t().dot(&g);
    let d_wc_query = &fwd.xq * g_sum;
    let mut d_wc = Array1::zeros(params.wc.len());
    d_wc.slice_mut(ndarray::s![..node_dim]).assign(&d_wc_node);
    d_wc.slice_mut(ndarray::s![node_dim..]).assign(&d_wc_query);
    let d_bc = g_sum;

    // Query branch.
    let d_xq = wc_query.to_owned() * g_sum;
    let d_wq = fwd
        .qbar
        .view()
        .insert_axis(Axis(1))
        .dot(&d_xq.view().insert_axis(Axis(0)));
    let d_bq = d_xq;

    // GNN branch, last layer back to the first.
    let mut d_x = g.view().insert_axis(Axis(1)).dot(&wc_node.insert_axis(Axis(0)));
    let mut layer_grads: Vec<GnnLayer> = Vec::with_capacity(k);
    for li in (0..k).rev() {
        let d_z = if li == k - 1 {
            d_x
        } else {
            &d_x * &fwd.z[li].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
        };
        let d_w1 = fwd.x[li].t().dot(&d_z);
        let d_w2 = fwd.ax[li].t().dot(&d_z);
        let layer = &params.layers[li];
        d_x = d_z.dot(&layer.w1.t()) + adjacency.t().dot(&d_z.dot(&layer.w2.t()));
        layer_grads.push(GnnLayer { w1: d_w1, w2: d_w2 });
    }
    layer_grads.reverse();

    Ok((loss, Gradients { layers: layer_grads, wq: d_wq, bq: d_bq, wc: d_wc, bc: d_bc }))
}

/// Gradient of the full objective (data + L2) in flat parameter order.
/// Exposed for the finite-difference verification suite.
pub fn flat_gradients(
    params: &ModelParams,
    example: &QueryGraph,
    emb: &EmbeddingTable,
    pos_weight: f64,
    lambda: f64,
) -> Result<Vec<f64>, ModelError> {
    let (_, grads) = loss_and_grads(params, example, emb, pos_weight)?;
    let mut flat = grads.flatten();
    let values = params.flatten();
    for ((g, &keep), v) in flat.iter_mut().zip(&params.l2_mask()).zip(values) {
        if keep {
            *g += 2.0 * lambda * v;
        }
    }
    Ok(flat)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, values: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Negative/positive label ratio of the training set; 1.0 (with a warning)
/// when one class is missing.
fn auto_pos_weight(examples: &[QueryGraph]) -> (f64, Option<String>) {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for example in examples {
        if let Some(labels) = &example.graph.labels {
            for &y in labels {
                if y == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
    }
    if pos == 0 || neg == 0 {
        (
            1.0,
            Some(format!(
                "training labels are single-class ({pos} positive, {neg} negative); pos_weight falls back to 1.0"
            )),
        )
    } else {
        (neg as f64 / pos as f64, None)
    }
}

/// Dev-set node-level macro-F1 under the current parameters.
fn dev_macro_f1(
    dev: &[QueryGraph],
    params: &ModelParams,
    emb: &EmbeddingTable,
    tau: f64,
) -> Result<f64, ModelError> {
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    for example in dev {
        let labels = example
            .graph
            .labels
            .as_ref()
            .ok_or_else(|| ModelError::UnlabeledGraph(example.graph.query_id.clone()))?;
        let probs = super::forward::score_graph(&example.graph, &example.query_tokens, emb, params)?;
        y_true.extend_from_slice(labels);
        y_pred.extend(predict_relevant(&probs, tau));
    }
    Ok(binary_macro_prf(&y_true, &y_pred).2)
}

/// Train on labeled graphs, one graph per optimizer step, and return the
/// parameters of the epoch with the best dev macro-F1 (the final epoch if
/// `dev` is empty). Deterministic given the config seed.
pub fn train(
    train_set: &[QueryGraph],
    dev: &[QueryGraph],
    emb: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    for example in train_set {
        if example.graph.is_degenerate() {
            return Err(ModelError::EmptyGraph(example.graph.query_id.clone()));
        }
    }

    let mut warnings = Vec::new();
    let pos_weight = match cfg.pos_weight {
        Some(w) => w,
        None => {
            let (w, warning) = auto_pos_weight(train_set);
            warnings.extend(warning);
            w
        }
    };

    let mut params = ModelParams::init(cfg)?;
    let mut flat = params.flatten();
    let mask = params.l2_mask();
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let example = &train_set[idx];
            let (data_term, grads) = loss_and_grads(&params, example, emb, pos_weight)?;
            loss_sum += data_term + cfg.l2_lambda * params.weight_squared_norm();
            let mut grad_flat = grads.flatten();
            for i in 0..grad_flat.len() {
                if mask[i] {
                    grad_flat[i] += 2.0 * cfg.l2_lambda * flat[i];
                }
            }
            adam.step(&mut flat, &grad_flat, cfg.learning_rate);
            params.assign_flat(&flat);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(dev_macro_f1(dev, &params, emb, cfg.tau)?)
        };
        if let Some(f1) = dev_f1 {
            // Ties go to the later epoch: with small dev sets the F1
            // plateaus early while the decision margins keep improving.
            let improves = best.as_ref().map(|(b, _, _)| f1 >= *b).unwrap_or(true);
            if improves {
                best = Some((f1, epoch, params.clone()));
            }
        }
        trace.push(EpochStats { epoch, train_loss, dev_f1 });
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, best_params)) => (best_params, Some(epoch)),
        None => (params, None),
    };
    Ok(TrainOutcome { params, trace, best_epoch, warnings })
}
