//! One-layer GCN encoder trained by contrasting local node representations
//! on the pre-processed graph against global summaries of its views.
//!
//! For `N` nodes and `M` views the loss is
//!
//! ```text
//! L = -1/(2NM) Σ_i Σ_j [ log D(h_i, s_j) + log(1 - D(h̃_i, s_j)) ]
//! H   = act(Â_P X W)        h_i  = row i of H
//! H̃   = act(Â_P X̃ W)        X̃ = row-shuffled X
//! s_j = sigmoid(mean_i act(Â_j X W)_i)
//! D(h, s) = sigmoid(hᵀ Ω s)
//! ```
//!
//! Gradients for `W` and `Ω` are derived by hand below and checked against
//! finite differences in the tests.

use serde::{Deserialize, Serialize};

use crate::augment::ViewBundle;
use crate::error::{Error, Result};
use crate::graph::{renormalized_adjacency, SparseGraph};
use crate::tensor::{dot, glorot_init, sigmoid, Adam, DenseMatrix, SeededRng};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

const INIT_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a new best loss before stopping.
    pub patience: usize,
    pub activation: Activation,
    /// Draw a fresh feature shuffle every epoch instead of once.
    pub reshuffle_each_epoch: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-3,
            max_epochs: 500,
            patience: 20,
            activation: Activation::Relu,
            reshuffle_each_epoch: false,
        }
    }
}

/// Encoder weight `W` (d×h) and bilinear discriminator weight `Ω` (h×h).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub w_enc: DenseMatrix,
    pub w_disc: DenseMatrix,
    pub activation: Activation,
}

impl EncoderModel {
    pub fn init(input_dim: usize, hidden: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("encoder hidden size must be at least 1"));
        }
        Ok(Self {
            w_enc: glorot_init(input_dim, hidden, rng)?,
            w_disc: glorot_init(hidden, hidden, rng)?,
            activation,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_enc.cols()
    }

    /// `act(Â X W)` with `Â` the renormalized adjacency of `g`.
    pub fn encode(&self, x: &DenseMatrix, g: &SparseGraph) -> Result<DenseMatrix> {
        if x.cols() != self.w_enc.rows() || x.rows() != g.num_nodes() {
            return Err(Error::shape(
                "encode",
                format!(
                    "features {:?}, weight {:?}, {} nodes",
                    x.shape(),
                    self.w_enc.shape(),
                    g.num_nodes()
                ),
            ));
        }
        let ax = renormalized_adjacency(g).spmm(x)?;
        self.encode_propagated(&ax)
    }

    /// Encoder output given the already-propagated features `Â X`.
    pub fn encode_propagated(&self, ax: &DenseMatrix) -> Result<DenseMatrix> {
        let act = self.activation;
        Ok(ax.matmul(&self.w_enc)?.map(|z| act.apply(z)))
    }
}

/// Global summary `sigmoid(column mean of H)`.
pub fn readout(h: &DenseMatrix) -> Vec<f64> {
    h.column_mean().into_iter().map(sigmoid).collect()
}

/// `sigmoid(hᵀ Ω s)`.
pub fn discriminate(model: &EncoderModel, h: &[f64], s: &[f64]) -> f64 {
    sigmoid(dot(h, &model.w_disc.matvec(s)))
}

/// Rows of `x` under a uniform random permutation.
pub fn shuffle_features(x: &DenseMatrix, rng: &mut SeededRng) -> Result<DenseMatrix> {
    if x.rows() < 2 {
        return Err(Error::invalid("shuffling features needs at least 2 nodes"));
    }
    Ok(x.select_rows(&rng.permutation(x.rows())))
}

/// Propagated feature operands for one loss evaluation: `Â_P X`, `Â_P X̃`
/// and `Â_j X` for each view. Only `W` and `Ω` change during training, so
/// these are computed once.
#[derive(Debug, Clone)]
pub struct ContrastiveInputs {
    adj_main: crate::tensor::SparseMatrix,
    pub main: DenseMatrix,
    pub shuffled: DenseMatrix,
    pub views: Vec<DenseMatrix>,
}

impl ContrastiveInputs {
    pub fn new(
        preprocessed: &SparseGraph,
        views: &[SparseGraph],
        x: &DenseMatrix,
        x_shuffled: &DenseMatrix,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("contrastive loss needs at least one view"));
        }
        if x.shape() != x_shuffled.shape() || x.rows() != preprocessed.num_nodes() {
            return Err(Error::shape(
                "contrastive inputs",
                format!(
                    "features {:?}, shuffled {:?}, {} nodes",
                    x.shape(),
                    x_shuffled.shape(),
                    preprocessed.num_nodes()
                ),
            ));
        }
        let adj_main = renormalized_adjacency(preprocessed);
        let main = adj_main.spmm(x)?;
        let shuffled = adj_main.spmm(x_shuffled)?;
        let views = views
            .iter()
            .map(|v| renormalized_adjacency(v).spmm(x))
            .collect::<Result<_>>()?;
        Ok(Self {
            adj_main,
            main,
            shuffled,
            views,
        })
    }

    pub fn set_shuffled(&mut self, x_shuffled: &DenseMatrix) -> Result<()> {
        self.shuffled = self.adj_main.spmm(x_shuffled)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub grad_enc: DenseMatrix,
    pub grad_disc: DenseMatrix,
}

fn log_clamped(p: f64) -> (f64, bool) {
    let c = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    (c.ln(), c == p)
}

/// Loss and gradients with respect to `W` and `Ω`.
pub fn contrastive_loss(model: &EncoderModel, inputs: &ContrastiveInputs) -> Result<ContrastiveLoss> {
    let act = model.activation;
    let omega = &model.w_disc;
    let n = inputs.main.rows();
    let m = inputs.views.len();
    let h = model.hidden();
    let c = 1.0 / (2.0 * n as f64 * m as f64);

    let z_pos = inputs.main.matmul(&model.w_enc)?;
    let z_neg = inputs.shuffled.matmul(&model.w_enc)?;
    let h_pos = z_pos.map(|z| act.apply(z));
    let h_neg = z_neg.map(|z| act.apply(z));
    let z_views: Vec<DenseMatrix> = inputs
        .views
        .iter()
        .map(|ax| ax.matmul(&model.w_enc))
        .collect::<Result<_>>()?;

    // summaries S (M×h) and V = S Ωᵀ, so row j of V is Ω s_j
    let mut summaries = DenseMatrix::zeros(m, h);
    for (j, z) in z_views.iter().enumerate() {
        let s = readout(&z.map(|v| act.apply(v)));
        summaries.row_mut(j).copy_from_slice(&s);
    }
    let v = summaries.matmul_t(omega)?;

    let logit_pos = h_pos.matmul_t(&v)?; // N×M
    let logit_neg = h_neg.matmul_t(&v)?;
    let mut g_pos = DenseMatrix::zeros(n, m);
    let mut g_neg = DenseMatrix::zeros(n, m);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = sigmoid(logit_pos.get(i, j));
            let (lp, live) = log_clamped(p);
            total += lp;
            if live {
                g_pos.set(i, j, -c * (1.0 - p));
            }
            let q = sigmoid(logit_neg.get(i, j));
            let (lq, live) = log_clamped(1.0 - q);
            total += lq;
            if live {
                g_neg.set(i, j, c * q);
            }
        }
    }
    let loss = -c * total;
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }

    // dL/dV rows: u_j = Σ_i g_pos[i,j] h_i + g_neg[i,j] h̃_i
    let mut u = g_pos.t_matmul(&h_pos)?;
    u.add_scaled(&g_neg.t_matmul(&h_neg)?, 1.0)?;
    let grad_disc = u.t_matmul(&summaries)?; // Σ_j u_j s_jᵀ
    let d_summary = u.matmul(omega)?; // row j = Ωᵀ u_j

    let mut d_pos = g_pos.matmul(&v)?;
    let mut d_neg = g_neg.matmul(&v)?;
    backprop_activation(&mut d_pos, &z_pos, act);
    backprop_activation(&mut d_neg, &z_neg, act);
    let mut grad_enc = inputs.main.t_matmul(&d_pos)?;
    grad_enc.add_scaled(&inputs.shuffled.t_matmul(&d_neg)?, 1.0)?;

    for (j, z) in z_views.iter().enumerate() {
        // every node row gets dL/d(mean) / N
        let s = summaries.row(j);
        let d_mean: Vec<f64> = d_summary
            .row(j)
            .iter()
            .zip(s)
            .map(|(d, s)| d * s * (1.0 - s) / n as f64)
            .collect();
        let mut d_view = DenseMatrix::zeros(n, h);
        for i in 0..n {
            d_view.row_mut(i).copy_from_slice(&d_mean);
        }
        backprop_activation(&mut d_view, z, act);
        grad_enc.add_scaled(&inputs.views[j].t_matmul(&d_view)?, 1.0)?;
    }

    Ok(ContrastiveLoss {
        loss,
        grad_enc,
        grad_disc,
    })
}

fn backprop_activation(grad: &mut DenseMatrix, pre: &DenseMatrix, act: Activation) {
    for (g, &z) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        *g *= act.derivative(z);
    }
}

/// Output of [`train_encoder`].
#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: EncoderModel,
    /// `encode(model, X, G^P)` for the returned (best-loss) model.
    pub embeddings: DenseMatrix,
    /// Loss at every epoch run.
    pub losses: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainedEncoder {
    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }
}

/// Adam on the contrastive loss with early stopping on the loss itself. The
/// model with the lowest observed loss is returned.
pub fn train_encoder(
    views: &ViewBundle,
    x: &DenseMatrix,
    config: &EncoderConfig,
    seed: u64,
) -> Result<TrainedEncoder> {
    let root = SeededRng::new(seed);
    let mut model = EncoderModel::init(
        x.cols(),
        config.hidden,
        config.activation,
        &mut root.fork(INIT_STREAM),
    )?;
    let mut shuffle_rng = root.fork(SHUFFLE_STREAM);
    let x_shuffled = shuffle_features(x, &mut shuffle_rng)?;
    let mut inputs = ContrastiveInputs::new(&views.preprocessed, &views.views, x, &x_shuffled)?;
    let mut adam = Adam::for_params(config.lr, &[&model.w_enc, &model.w_disc]);

    let mut losses = Vec::new();
    let mut best: Option<(usize, f64, EncoderModel)> = None;
    let mut since_best = 0;
    for epoch in 0..config.max_epochs {
        if config.reshuffle_each_epoch && epoch > 0 {
            inputs.set_shuffled(&shuffle_features(x, &mut shuffle_rng)?)?;
        }
        let step = contrastive_loss(&model, &inputs)?;
        losses.push(step.loss);
        if best.as_ref().is_none_or(|(_, l, _)| step.loss < *l) {
            best = Some((epoch, step.loss, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::debug!("encoder early stop at epoch {epoch}");
                break;
            }
        }
        adam.step(
            &mut [&mut model.w_enc, &mut model.w_disc],
            &[&step.grad_enc, &step.grad_disc],
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at encoder epoch {epoch}")),
            other => other,
        })?;
    }
    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, m)) = best {
        model = m;
    }
    let embeddings = model.encode_propagated(&inputs.main)?;
    Ok(TrainedEncoder {
        model,
        embeddings,
        losses,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::make_views;
    use crate::graph::EdgeSet;
    use crate::tensor::grad_check;

    fn toy_graph() -> SparseGraph {
        SparseGraph::undirected(5, [(0, 1), (1, 2), (2, 3), (1, 3)]).unwrap()
    }

    fn random_matrix(rng: &mut SeededRng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.uniform_range(-1.0, 1.0))
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut rng = SeededRng::new(0);
        let mut model = EncoderModel::init(3, 4, Activation::Relu, &mut rng).unwrap();
        model.w_enc = DenseMatrix::zeros(3, 4);
        let x = random_matrix(&mut rng, 5, 3);
        assert_eq!(model.encode(&x, &toy_graph()).unwrap(), DenseMatrix::zeros(5, 4));
    }

    #[test]
    fn isolated_node_sees_only_itself() {
        let mut rng = SeededRng::new(1);
        let model = EncoderModel::init(3, 2, Activation::Relu, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 5, 3);
        let h = model.encode(&x, &toy_graph()).unwrap();
        let own = model.w_enc.t_matvec(x.row(4));
        for (a, b) in h.row(4).iter().zip(own) {
            assert!((a - b.max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_matches_dense_oracle() {
        let mut rng = SeededRng::new(2);
        let model = EncoderModel::init(3, 4, Activation::Relu, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 5, 3);
        let g = toy_graph();
        // dense Â built entry by entry from degrees
        let deg: Vec<f64> = (0..5).map(|i| g.degree(i) as f64 + 1.0).collect();
        let a_hat = DenseMatrix::from_fn(5, 5, |i, j| {
            if i == j || g.has_arc(i, j) {
                1.0 / (deg[i] * deg[j]).sqrt()
            } else {
                0.0
            }
        });
        let want = a_hat.matmul(&x).unwrap().matmul(&model.w_enc).unwrap().map(|v| v.max(0.0));
        assert!(model.encode(&x, &g).unwrap().max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn readout_examples() {
        assert_eq!(readout(&DenseMatrix::zeros(3, 2)), vec![0.5, 0.5]);
        let s = readout(&DenseMatrix::from_vec(1, 1, vec![3f64.ln()]).unwrap());
        assert!((s[0] - 0.75).abs() < 1e-15);
        let h = DenseMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let p = h.select_rows(&[2, 0, 3, 1]);
        let (a, b) = (readout(&h), readout(&p));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn discriminator_examples() {
        let mut model = EncoderModel::init(2, 2, Activation::Relu, &mut SeededRng::new(0)).unwrap();
        model.w_disc = DenseMatrix::zeros(2, 2);
        assert_eq!(discriminate(&model, &[0.3, -2.0], &[0.9, 0.1]), 0.5);
        model.w_disc = DenseMatrix::identity(2);
        let d = discriminate(&model, &[1.0, 0.0], &[1.0, 0.0]);
        assert!((d - 0.731_058_578_630_004_9).abs() < 1e-12);
        model.w_disc.scale(1e3);
        assert!(discriminate(&model, &[1.0, 0.0], &[1.0, 0.0]) > 1.0 - 1e-12);
        assert!(discriminate(&model, &[-1.0, 0.0], &[1.0, 0.0]) < 1e-12);
    }

    #[test]
    fn shuffle_preserves_rows_and_is_seeded() {
        let x = DenseMatrix::from_fn(6, 2, |i, j| (i * 2 + j) as f64);
        let a = shuffle_features(&x, &mut SeededRng::new(4)).unwrap();
        let b = shuffle_features(&x, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a, b);
        let mut rows_a: Vec<Vec<u64>> = (0..6).map(|i| a.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        let mut rows_x: Vec<Vec<u64>> = (0..6).map(|i| x.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        rows_a.sort();
        rows_x.sort();
        assert_eq!(rows_a, rows_x);
        assert!(shuffle_features(&DenseMatrix::zeros(1, 2), &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn shuffle_is_uniform_monte_carlo() {
        let x = DenseMatrix::from_fn(10, 1, |i, _| i as f64);
        let mut counts = [[0usize; 10]; 10];
        for seed in 0..10_000 {
            let s = shuffle_features(&x, &mut SeededRng::new(seed)).unwrap();
            for slot in 0..10 {
                counts[s.get(slot, 0) as usize][slot] += 1;
            }
        }
        for row in counts {
            for c in row {
                let f = c as f64 / 10_000.0;
                assert!((f - 0.1).abs() <= 0.01, "frequency {f}");
            }
        }
    }

    fn toy_instance(seed: u64) -> (EncoderModel, ContrastiveInputs) {
        let mut rng = SeededRng::new(seed);
        let g = SparseGraph::undirected(8, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 4)])
            .unwrap();
        let removed = EdgeSet::from_pairs([(0, 7), (2, 6), (1, 5)]);
        let views = make_views(&g, &removed, 0.5, 2, seed).unwrap();
        let x = random_matrix(&mut rng, 8, 5);
        let xs = shuffle_features(&x, &mut rng).unwrap();
        let model = EncoderModel::init(5, 4, Activation::Relu, &mut rng).unwrap();
        let inputs = ContrastiveInputs::new(&g, &views.views, &x, &xs).unwrap();
        (model, inputs)
    }

    #[test]
    fn zero_discriminator_gives_ln2() {
        for seed in 0..5 {
            let (mut model, inputs) = toy_instance(seed);
            model.w_disc = DenseMatrix::zeros(4, 4);
            let l = contrastive_loss(&model, &inputs).unwrap().loss;
            assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_is_bounded_below_by_clamp() {
        let (model, inputs) = toy_instance(0);
        let floor = -(1.0 - PROBABILITY_CLAMP).ln();
        assert!(floor < 1e-6);
        assert!(contrastive_loss(&model, &inputs).unwrap().loss >= floor);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Relu, Activation::Sigmoid] {
            let (mut model, inputs) = toy_instance(3);
            model.activation = act;
            let lg = contrastive_loss(&model, &inputs).unwrap();
            let err = grad_check(
                |p| {
                    let m = EncoderModel {
                        w_enc: p[0].clone(),
                        w_disc: p[1].clone(),
                        activation: act,
                    };
                    Ok(contrastive_loss(&m, &inputs)?.loss)
                },
                &[model.w_enc.clone(), model.w_disc.clone()],
                &[lg.grad_enc, lg.grad_disc],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    fn small_bundle() -> (ViewBundle, DenseMatrix) {
        use crate::data::{generate_sbm, SbmSpec};
        let b = generate_sbm(&SbmSpec {
            nodes: 60,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 20,
            on_bits: 5,
            flip_noise: 0.05,
            ..SbmSpec::default()
        })
        .unwrap();
        let views = make_views(&b.graph, &EdgeSet::new(), 0.2, 2, 0).unwrap();
        (views, b.features)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (views, x) = small_bundle();
        let cfg = EncoderConfig {
            max_epochs: 0,
            hidden: 8,
            ..EncoderConfig::default()
        };
        let t = train_encoder(&views, &x, &cfg, 5).unwrap();
        let init = EncoderModel::init(20, 8, Activation::Relu, &mut SeededRng::new(5).fork(INIT_STREAM)).unwrap();
        assert_eq!(t.model, init);
        assert!(t.losses.is_empty());
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let (views, x) = small_bundle();
        let cfg = EncoderConfig {
            hidden: 16,
            lr: 5e-3,
            max_epochs: 60,
            ..EncoderConfig::default()
        };
        let a = train_encoder(&views, &x, &cfg, 1).unwrap();
        let b = train_encoder(&views, &x, &cfg, 1).unwrap();
        assert!(a.losses.last().unwrap() <= &a.losses[0]);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.embeddings, a.model.encode(&x, &views.preprocessed).unwrap());
    }

    #[test]
    fn reshuffling_changes_the_run() {
        let (views, x) = small_bundle();
        let base = EncoderConfig {
            hidden: 8,
            max_epochs: 5,
            ..EncoderConfig::default()
        };
        let a = train_encoder(&views, &x, &base, 1).unwrap();
        let b = train_encoder(
            &views,
            &x,
            &EncoderConfig {
                reshuffle_each_epoch: true,
                ..base
            },
            1,
        )
        .unwrap();
        assert_eq!(a.losses[0], b.losses[0]);
        assert_ne!(a.losses[2..], b.losses[2..]);
    }
}
