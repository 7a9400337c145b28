//! Two-layer node classifier over the refined graph.
//!
//! Each layer computes `act(P H W)` for a fixed sparse operator `P`:
//!
//! - advanced: `P = D_α + β I` where row `i` of `D_α` holds the weights
//!   `(d_i d_j)^α / Z_i` over the out-neighbours `j` of `i` and `Z_i`
//!   normalizes the row to 1. Degrees are out-degrees of the graph.
//! - vanilla: `P = Â`, the renormalized adjacency of the symmetrized graph.
//!
//! Layer 1 applies ReLU, layer 2 feeds a softmax cross-entropy over the
//! training nodes.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DataSplit;
use crate::error::{Error, Result};
use crate::graph::{renormalized_adjacency, LabelVector, SparseGraph};
use crate::tensor::{glorot_init, relu_backward, softmax_cross_entropy, Adam, DenseMatrix, SeededRng, SparseMatrix};

const INIT_STREAM: u64 = 20;
const DROPOUT_STREAM: u64 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMode {
    Advanced,
    Vanilla,
}

impl FromStr for ClassifierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "advanced" => Ok(Self::Advanced),
            "vanilla" => Ok(Self::Vanilla),
            other => Err(Error::invalid(format!(
                "unknown classifier mode '{other}' (expected advanced or vanilla)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Coefficient of `½‖W‖²` for both layers.
    pub weight_decay: f64,
    pub epochs: usize,
    /// Inverted dropout on the input of each layer during training.
    pub dropout: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: ClassifierMode,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            dropout: 0.5,
            alpha: 0.6,
            beta: 2.0,
            mode: ClassifierMode::Advanced,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::invalid("classifier hidden size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::invalid("alpha and beta must be finite"));
        }
        Ok(())
    }
}

/// Row-normalized degree weights `(d_i d_j)^α / Z_i` over out-neighbours.
///
/// `d_i` cancels in the ratio, so each row is a softmax of `α ln d_j`.
/// For `α != 0`, neighbours with `d_j = 0` get weight 0 when some neighbour
/// has positive degree; a row whose neighbours all have degree 0 is uniform.
pub fn aggregation_weights(g: &SparseGraph, alpha: f64) -> SparseMatrix {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|i| g.degree(i) as f64).collect();
    let mut triplets = Vec::with_capacity(g.num_arcs());
    let mut logw = Vec::new();
    for i in 0..n {
        let nbrs = g.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        logw.clear();
        let any_positive = nbrs.iter().any(|&j| deg[j] > 0.0);
        for &j in nbrs {
            if alpha == 0.0 || !any_positive {
                logw.push((j, 0.0));
            } else if deg[j] > 0.0 {
                logw.push((j, alpha * deg[j].ln()));
            }
        }
        let max = logw.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logw.iter().map(|&(_, l)| (l - max).exp()).sum();
        triplets.extend(logw.iter().map(|&(j, l)| (i, j, (l - max).exp() / z)));
    }
    SparseMatrix::from_triplets(n, n, triplets).expect("indices come from the graph")
}

/// The layer operator `P` for the given mode.
pub fn propagation_matrix(g: &SparseGraph, mode: ClassifierMode, alpha: f64, beta: f64) -> SparseMatrix {
    let n = g.num_nodes();
    match mode {
        ClassifierMode::Vanilla => renormalized_adjacency(&g.symmetrized()),
        ClassifierMode::Advanced => {
            let w = aggregation_weights(g, alpha);
            let mut triplets: Vec<(usize, usize, f64)> = (0..n)
                .flat_map(|i| {
                    let (cols, vals) = w.row(i);
                    cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
                })
                .collect();
            triplets.extend((0..n).map(|i| (i, i, beta)));
            SparseMatrix::from_triplets(n, n, triplets).expect("indices come from the graph")
        }
    }
}

fn layer(p: &SparseMatrix, h: &DenseMatrix, w: &DenseMatrix, apply_relu: bool) -> Result<DenseMatrix> {
    let out = p.spmm(h)?.matmul(w)?;
    Ok(if apply_relu { out.map(|v| v.max(0.0)) } else { out })
}

/// One advanced layer: `act((Σ_j w_ij h_j + β h_i) W)`.
pub fn advanced_propagate(
    g: &SparseGraph,
    h: &DenseMatrix,
    alpha: f64,
    beta: f64,
    w: &DenseMatrix,
    apply_relu: bool,
) -> Result<DenseMatrix> {
    layer(&propagation_matrix(g, ClassifierMode::Advanced, alpha, beta), h, w, apply_relu)
}

/// One GCN layer `act(Â H W)` on the symmetrized graph.
pub fn vanilla_propagate(g: &SparseGraph, h: &DenseMatrix, w: &DenseMatrix, apply_relu: bool) -> Result<DenseMatrix> {
    layer(&propagation_matrix(g, ClassifierMode::Vanilla, 0.0, 0.0), h, w, apply_relu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub mode: ClassifierMode,
}

impl ClassifierModel {
    pub fn init(input_dim: usize, config: &ClassifierConfig, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            w1: glorot_init(input_dim, config.hidden, rng)?,
            w2: glorot_init(config.hidden, classes, rng)?,
            alpha: config.alpha,
            beta: config.beta,
            mode: config.mode,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn propagation(&self, g: &SparseGraph) -> SparseMatrix {
        propagation_matrix(g, self.mode, self.alpha, self.beta)
    }

    fn check_input(&self, g: &SparseGraph, h: &DenseMatrix) -> Result<()> {
        if h.rows() != g.num_nodes() || h.cols() != self.w1.rows() {
            return Err(Error::shape(
                "classifier input",
                format!(
                    "features {:?} for {} nodes and weight {:?}",
                    h.shape(),
                    g.num_nodes(),
                    self.w1.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Pre-softmax outputs of the second layer.
    pub fn logits(&self, g: &SparseGraph, h: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(g, h)?;
        self.logits_with(&self.propagation(g), h)
    }

    fn logits_with(&self, p: &SparseMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
        let hidden = layer(p, h, &self.w1, true)?;
        layer(p, &hidden, &self.w2, false)
    }
}

/// Row-wise argmax, ties to the smaller class.
pub fn argmax_rows(m: &DenseMatrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0
        })
        .collect()
}

/// Predicted class per node.
pub fn predict(model: &ClassifierModel, g: &SparseGraph, h: &DenseMatrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.logits(g, h)?))
}

/// Fraction of `nodes` whose prediction equals their (known) label.
pub fn accuracy(predictions: &[usize], labels: &LabelVector, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::invalid("accuracy over an empty node set"));
    }
    let mut correct = 0usize;
    for &i in nodes {
        let (Some(&p), Some(y)) = (predictions.get(i), labels.get(i)) else {
            return Err(Error::invalid(format!("node {i} has no prediction or no label")));
        };
        correct += usize::from(p == y);
    }
    Ok(correct as f64 / nodes.len() as f64)
}

/// Loss and gradients for `(W1, W2)`.
#[derive(Debug, Clone)]
pub struct ClassifierLoss {
    pub loss: f64,
    pub grad_w1: DenseMatrix,
    pub grad_w2: DenseMatrix,
}

struct Operator {
    p: SparseMatrix,
    p_t: SparseMatrix,
}

#[allow(clippy::too_many_arguments)]
fn forward_backward(
    w1: &DenseMatrix,
    w2: &DenseMatrix,
    op: &Operator,
    x: &DenseMatrix,
    masks: Option<(&DenseMatrix, &DenseMatrix)>,
    labels: &[usize],
    nodes: &[usize],
    weight_decay: f64,
) -> Result<ClassifierLoss> {
    let x_in = match masks {
        Some((m, _)) => {
            let mut x = x.clone();
            x.hadamard_assign(m)?;
            x
        }
        None => x.clone(),
    };
    let px = op.p.spmm(&x_in)?;
    let z1 = px.matmul(w1)?;
    let mut a1 = z1.map(|v| v.max(0.0));
    if let Some((_, m)) = masks {
        a1.hadamard_assign(m)?;
    }
    let pa = op.p.spmm(&a1)?;
    let z2 = pa.matmul(w2)?;
    let (ce, dz2) = softmax_cross_entropy(&z2, labels, nodes)?;
    let loss = ce + 0.5 * weight_decay * (w1.sum_squares() + w2.sum_squares());
    if !loss.is_finite() {
        return Err(Error::NonFinite("classifier loss".into()));
    }

    let mut grad_w2 = pa.t_matmul(&dz2)?;
    grad_w2.add_scaled(w2, weight_decay)?;
    let mut da1 = op.p_t.spmm(&dz2.matmul_t(w2)?)?;
    if let Some((_, m)) = masks {
        da1.hadamard_assign(m)?;
    }
    relu_backward(&mut da1, &z1);
    let mut grad_w1 = px.t_matmul(&da1)?;
    grad_w1.add_scaled(w1, weight_decay)?;
    Ok(ClassifierLoss {
        loss,
        grad_w1,
        grad_w2,
    })
}

/// Mean cross-entropy over `nodes` plus weight decay, without dropout.
pub fn classifier_loss(
    model: &ClassifierModel,
    g: &SparseGraph,
    x: &DenseMatrix,
    labels: &LabelVector,
    nodes: &[usize],
    weight_decay: f64,
) -> Result<ClassifierLoss> {
    model.check_input(g, x)?;
    let p = model.propagation(g);
    let op = Operator { p_t: p.transpose(), p };
    forward_backward(&model.w1, &model.w2, &op, x, None, &labels.to_dense(), nodes, weight_decay)
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    pub best_epoch: usize,
    pub val_accuracy: Option<f64>,
    /// Accuracy of the selected model on the test nodes; `None` without any.
    pub test_accuracy: Option<f64>,
    pub train_losses: Vec<f64>,
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut SeededRng) -> DenseMatrix {
    let keep = 1.0 / (1.0 - rate);
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.bernoulli(rate) { 0.0 } else { keep })
}

/// Adam training with model selection on validation accuracy, ties going to
/// the lower validation loss. Without validation nodes the final epoch is
/// kept.
pub fn train_classifier(
    g: &SparseGraph,
    x: &DenseMatrix,
    labels: &LabelVector,
    split: &DataSplit,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<TrainedClassifier> {
    config.validate()?;
    split.validate(g.num_nodes())?;
    if split.train.is_empty() {
        return Err(Error::invalid("classifier training needs at least one training node"));
    }
    if labels.len() != g.num_nodes() {
        return Err(Error::shape(
            "train_classifier",
            format!("{} labels for {} nodes", labels.len(), g.num_nodes()),
        ));
    }
    if config.epochs == 0 {
        return Err(Error::invalid("classifier needs at least one epoch"));
    }
    let root = SeededRng::new(seed);
    let mut model = ClassifierModel::init(x.cols(), config, labels.num_classes(), &mut root.fork(INIT_STREAM))?;
    model.check_input(g, x)?;
    let mut dropout_rng = root.fork(DROPOUT_STREAM);
    let p = model.propagation(g);
    let op = Operator { p_t: p.transpose(), p };
    let dense_labels = labels.to_dense();
    let mut adam = Adam::for_params(config.lr, &[&model.w1, &model.w2]);

    if split.val.is_empty() {
        log::warn!("no validation nodes; keeping the last-epoch classifier");
    }
    let mut best: Option<(usize, f64, f64, ClassifierModel)> = None;
    let mut train_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let masks = (config.dropout > 0.0).then(|| {
            (
                dropout_mask(x.rows(), x.cols(), config.dropout, &mut dropout_rng),
                dropout_mask(x.rows(), config.hidden, config.dropout, &mut dropout_rng),
            )
        });
        let step = forward_backward(
            &model.w1,
            &model.w2,
            &op,
            x,
            masks.as_ref().map(|(a, b)| (a, b)),
            &dense_labels,
            &split.train,
            config.weight_decay,
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at classifier epoch {epoch}")),
            other => other,
        })?;
        train_losses.push(step.loss);
        adam.step(&mut [&mut model.w1, &mut model.w2], &[&step.grad_w1, &step.grad_w2])?;

        if !split.val.is_empty() {
            let logits = model.logits_with(&op.p, x)?;
            let val = accuracy(&argmax_rows(&logits), labels, &split.val)?;
            let (val_loss, _) = softmax_cross_entropy(&logits, &dense_labels, &split.val)?;
            let better = best
                .as_ref()
                .is_none_or(|(_, acc, loss, _)| val > *acc || (val == *acc && val_loss < *loss));
            if better {
                best = Some((epoch, val, val_loss, model.clone()));
            }
        }
    }
    let (best_epoch, val_accuracy) = match best {
        Some((e, v, _, m)) => {
            model = m;
            (e, Some(v))
        }
        None => (config.epochs - 1, None),
    };
    let test_accuracy = if split.test.is_empty() {
        None
    } else {
        let pred = argmax_rows(&model.logits_with(&op.p, x)?);
        Some(accuracy(&pred, labels, &split.test)?)
    };
    Ok(TrainedClassifier {
        model,
        best_epoch,
        val_accuracy,
        test_accuracy,
        train_losses,
    })
}
