//! Explicit stacked hypergraph convolutions and a feature-only MLP, both with
//! hand-written backpropagation.
//!
//! The k-layer HGNN computes `Z_i = σ(L Z_{i−1} W_i)` from `Z_0 = X`, with
//! `L Z` evaluated as `L_ve (L_veᵀ Z)`, and finishes with a linear head.

use rand::Rng;

use crate::data::Dataset;
use crate::equilibrium::Activation;
use crate::error::{Error, Result};
use crate::hypergraph::build_lve;
use crate::linalg::{spmm, DenseMatrix, SparseMatrix};
use crate::model::{accuracy, classification_loss};
use crate::seed::{stream_rng, Stream};

/// `L = L_ve L_veᵀ` applied through its sparse factors.
#[derive(Debug, Clone)]
pub struct Propagation {
    l_ve: SparseMatrix,
    l_ev: SparseMatrix,
}

impl Propagation {
    pub fn new(l_ve: SparseMatrix) -> Self {
        let l_ev = l_ve.transpose();
        Self { l_ve, l_ev }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::new(build_lve(&ds.hypergraph))
    }

    pub fn apply(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        spmm(&self.l_ve, &spmm(&self.l_ev, z)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgnnModel {
    /// `W_1` is d_in×d, the rest d×d.
    pub layers: Vec<DenseMatrix>,
    pub head: DenseMatrix,
    pub head_bias: Vec<f64>,
    pub activation: Activation,
}

impl HgnnModel {
    pub fn new(
        layers: Vec<DenseMatrix>,
        head: DenseMatrix,
        head_bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("HGNN needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::DimensionMismatch {
                    op: "HGNN layer chain",
                    left: pair[0].shape(),
                    right: pair[1].shape(),
                });
            }
        }
        let last = layers.last().unwrap();
        if last.cols() != head.rows() || head.cols() != head_bias.len() {
            return Err(Error::DimensionMismatch {
                op: "HGNN head",
                left: last.shape(),
                right: head.shape(),
            });
        }
        Ok(Self {
            layers,
            head,
            head_bias,
            activation,
        })
    }

    /// Glorot-uniform layers and head, zero bias.
    pub fn init(
        depth: usize,
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if depth == 0 || hidden_dim == 0 || classes == 0 {
            return Err(Error::invalid("depth, hidden dimension and classes must be at least 1"));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let mut glorot = |rows: usize, cols: usize| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-s..=s))
        };
        let mut layers = Vec::with_capacity(depth);
        layers.push(glorot(input_dim, hidden_dim));
        for _ in 1..depth {
            layers.push(glorot(hidden_dim, hidden_dim));
        }
        let head = glorot(hidden_dim, classes);
        Self::new(layers, head, vec![0.0; classes], activation)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct HgnnCache {
    /// `L Z_{i−1}` for every layer.
    pub propagated: Vec<DenseMatrix>,
    /// `L Z_{i−1} W_i`.
    pub pre_activations: Vec<DenseMatrix>,
    /// `Z_k`.
    pub output: DenseMatrix,
}

pub fn hgnn_forward(prop: &Propagation, x: &DenseMatrix, model: &HgnnModel) -> Result<(DenseMatrix, HgnnCache)> {
    let mut z = x.clone();
    let mut propagated = Vec::with_capacity(model.depth());
    let mut pre_activations = Vec::with_capacity(model.depth());
    for w in &model.layers {
        let lz = prop.apply(&z)?;
        let p = lz.matmul(w)?;
        z = p.map(|v| model.activation.apply(v));
        propagated.push(lz);
        pre_activations.push(p);
    }
    let mut logits = z.matmul(&model.head)?;
    logits.add_row_broadcast(&model.head_bias)?;
    Ok((
        logits,
        HgnnCache {
            propagated,
            pre_activations,
            output: z,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgnnGradients {
    pub layers: Vec<DenseMatrix>,
    pub head: DenseMatrix,
    pub head_bias: Vec<f64>,
}

/// Backpropagates `∂loss/∂logits` through the head and every layer.
pub fn hgnn_backprop(
    prop: &Propagation,
    model: &HgnnModel,
    cache: &HgnnCache,
    dlogits: &DenseMatrix,
) -> Result<HgnnGradients> {
    let head = cache.output.t_matmul(dlogits)?;
    let head_bias = dlogits.column_sums();
    let mut dz = dlogits.matmul_t(&model.head)?;
    let mut layers = vec![DenseMatrix::zeros(0, 0); model.depth()];
    for i in (0..model.depth()).rev() {
        let mask = cache.pre_activations[i].map(|v| model.activation.derivative(v));
        let dp = dz.hadamard(&mask)?;
        layers[i] = cache.propagated[i].t_matmul(&dp)?;
        if i > 0 {
            // L is symmetric
            dz = prop.apply(&dp.matmul_t(&model.layers[i])?)?;
        }
    }
    Ok(HgnnGradients {
        layers,
        head,
        head_bias,
    })
}

pub fn hgnn_step(model: &mut HgnnModel, grads: &HgnnGradients, lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (w, g) in model.layers.iter_mut().zip(&grads.layers) {
        axpy(w.as_mut_slice(), g.as_slice(), -lr);
    }
    axpy(model.head.as_mut_slice(), grads.head.as_slice(), -lr);
    axpy(&mut model.head_bias, &grads.head_bias, -lr);
}

impl HgnnGradients {
    /// Heavy-ball accumulation `self ← μ·self + g`.
    fn accumulate(&mut self, g: &HgnnGradients, momentum: f64) {
        for (v, g) in self.layers.iter_mut().zip(&g.layers) {
            blend(v.as_mut_slice(), g.as_slice(), momentum);
        }
        blend(self.head.as_mut_slice(), g.head.as_slice(), momentum);
        blend(&mut self.head_bias, &g.head_bias, momentum);
    }
}

fn blend(v: &mut [f64], g: &[f64], momentum: f64) {
    for (v, g) in v.iter_mut().zip(g) {
        *v = momentum * *v + g;
    }
}

fn axpy(y: &mut [f64], x: &[f64], alpha: f64) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// One-hidden-layer ReLU network on node features alone.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub pre_hidden: DenseMatrix,
    pub hidden: DenseMatrix,
}

impl MlpModel {
    pub fn init(input_dim: usize, hidden_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::invalid("MLP hidden width must be at least 1"));
        }
        if classes == 0 {
            return Err(Error::invalid("MLP needs at least one class"));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let mut glorot = |rows: usize, cols: usize| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-s..=s))
        };
        Ok(Self {
            w1: glorot(input_dim, hidden_dim),
            b1: vec![0.0; hidden_dim],
            w2: glorot(hidden_dim, classes),
            b2: vec![0.0; classes],
        })
    }
}

pub fn mlp_forward(x: &DenseMatrix, model: &MlpModel) -> Result<(DenseMatrix, MlpCache)> {
    let mut pre = x.matmul(&model.w1)?;
    pre.add_row_broadcast(&model.b1)?;
    let hidden = pre.map(|v| v.max(0.0));
    let mut logits = hidden.matmul(&model.w2)?;
    logits.add_row_broadcast(&model.b2)?;
    Ok((
        logits,
        MlpCache {
            pre_hidden: pre,
            hidden,
        },
    ))
}

pub fn mlp_backprop(x: &DenseMatrix, model: &MlpModel, cache: &MlpCache, dlogits: &DenseMatrix) -> Result<MlpModel> {
    let w2 = cache.hidden.t_matmul(dlogits)?;
    let b2 = dlogits.column_sums();
    let dh = dlogits.matmul_t(&model.w2)?;
    let mask = cache.pre_hidden.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let dpre = dh.hadamard(&mask)?;
    Ok(MlpModel {
        w1: x.t_matmul(&dpre)?,
        b1: dpre.column_sums(),
        w2,
        b2,
    })
}

impl MlpModel {
    fn accumulate(&mut self, g: &MlpModel, momentum: f64) {
        blend(self.w1.as_mut_slice(), g.w1.as_slice(), momentum);
        blend(&mut self.b1, &g.b1, momentum);
        blend(self.w2.as_mut_slice(), g.w2.as_slice(), momentum);
        blend(&mut self.b2, &g.b2, momentum);
    }
}

pub fn mlp_step(model: &mut MlpModel, grads: &MlpModel, lr: f64) {
    if lr == 0.0 {
        return;
    }
    axpy(model.w1.as_mut_slice(), grads.w1.as_slice(), -lr);
    axpy(&mut model.b1, &grads.b1, -lr);
    axpy(model.w2.as_mut_slice(), grads.w2.as_slice(), -lr);
    axpy(&mut model.b2, &grads.b2, -lr);
}

/// Shared settings for baseline training runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Heavy-ball coefficient, 0 for plain gradient descent.
    pub momentum: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            momentum: 0.0,
            hidden_dim: 128,
            seed: 0,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineResult {
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains a `depth`-layer HGNN on the dataset's training mask and reports
/// test accuracy.
pub fn train_hgnn(ds: &Dataset, depth: usize, cfg: &BaselineConfig) -> Result<(HgnnModel, BaselineResult)> {
    let prop = Propagation::from_dataset(ds);
    let mut model = HgnnModel::init(
        depth,
        ds.features.cols(),
        cfg.hidden_dim,
        ds.num_classes,
        cfg.activation,
        cfg.seed,
    )?;
    let mut loss = f64::NAN;
    let mut velocity: Option<HgnnGradients> = None;
    for _ in 0..cfg.epochs {
        let (logits, cache) = hgnn_forward(&prop, &ds.features, &model)?;
        let (l, dlogits) = classification_loss(&logits, &ds.labels, &ds.train_mask)?;
        loss = l;
        let grads = hgnn_backprop(&prop, &model, &cache, &dlogits)?;
        let step = match velocity.as_mut() {
            Some(v) => {
                v.accumulate(&grads, cfg.momentum);
                &*v
            }
            None => velocity.insert(grads),
        };
        hgnn_step(&mut model, step, cfg.learning_rate);
    }
    let (logits, _) = hgnn_forward(&prop, &ds.features, &model)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite("HGNN logits"));
    }
    let result = BaselineResult {
        final_loss: loss,
        train_accuracy: accuracy(&logits, &ds.labels, &ds.train_mask),
        test_accuracy: accuracy(&logits, &ds.labels, &ds.test_mask),
    };
    Ok((model, result))
}

pub fn train_mlp(ds: &Dataset, cfg: &BaselineConfig) -> Result<(MlpModel, BaselineResult)> {
    let mut model = MlpModel::init(ds.features.cols(), cfg.hidden_dim, ds.num_classes, cfg.seed)?;
    let mut loss = f64::NAN;
    let mut velocity: Option<MlpModel> = None;
    for _ in 0..cfg.epochs {
        let (logits, cache) = mlp_forward(&ds.features, &model)?;
        let (l, dlogits) = classification_loss(&logits, &ds.labels, &ds.train_mask)?;
        loss = l;
        let grads = mlp_backprop(&ds.features, &model, &cache, &dlogits)?;
        let step = match velocity.as_mut() {
            Some(v) => {
                v.accumulate(&grads, cfg.momentum);
                &*v
            }
            None => velocity.insert(grads),
        };
        mlp_step(&mut model, step, cfg.learning_rate);
    }
    let (logits, _) = mlp_forward(&ds.features, &model)?;
    let result = BaselineResult {
        final_loss: loss,
        train_accuracy: accuracy(&logits, &ds.labels, &ds.train_mask),
        test_accuracy: accuracy(&logits, &ds.labels, &ds.test_mask),
    };
    Ok((model, result))
}
