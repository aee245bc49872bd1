//! Projected gradient descent through the equilibrium.
//!
//! One epoch: solve for `Ẑ`, sample a membership batch, evaluate both
//! heads, solve the adjoint, assemble every parameter gradient, take a
//! (momentum) gradient step and project each row of `W` back onto the ℓ1
//! ball of radius `κ / ‖Ā‖_op`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::equilibrium::{
    backward_adjoint, forward_fixed_point, param_gradients, pre_activation, Activation, EmbeddingState, SolverConfig,
};
use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, NormalizedOperators, OpnormConfig};
use crate::linalg::{inf_norm, project_rows_l1, DenseMatrix};
use crate::model::{
    accuracy, affine_bias, head_gradients, sample_membership, stacked_features, HeadGradients, MembershipBatch,
    ModelParams,
};
use crate::seed::{stream_rng, stream_seed, Stream};

/// Slack allowed on `‖W‖_∞ · ‖Ā‖_op ≤ κ` after projection.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub hidden_dim: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
    pub forward: SolverConfig,
    pub backward: SolverConfig,
    /// Fraction of training nodes held out for validation reporting.
    pub val_fraction: f64,
    pub opnorm_tol: f64,
    pub opnorm_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            momentum: 0.0,
            gamma: 0.1,
            kappa: 0.95,
            hidden_dim: 128,
            batch_size: 256,
            seed: 0,
            activation: Activation::Relu,
            forward: SolverConfig::forward_default(),
            backward: SolverConfig::backward_default(),
            val_fraction: 0.1,
            opnorm_tol: 1e-14,
            opnorm_max_iter: 20_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::invalid(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden dimension must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        self.forward.validate()?;
        self.backward.validate()
    }

    pub fn opnorm_config(&self) -> OpnormConfig {
        OpnormConfig {
            tol: self.opnorm_tol,
            max_iter: self.opnorm_max_iter,
            seed: stream_seed(self.seed, Stream::Opnorm),
        }
    }
}

/// Everything the training loop needs from a dataset, with operators built.
#[derive(Debug, Clone)]
pub struct Problem {
    pub hypergraph: Hypergraph,
    pub ops: NormalizedOperators,
    /// `[X_v; X_e]`.
    pub x_hat: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Training nodes that enter the loss.
    pub fit_mask: Vec<bool>,
    /// Training nodes held out for reporting.
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl Problem {
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let ops = NormalizedOperators::from_hypergraph(&ds.hypergraph, cfg.kappa, &cfg.opnorm_config())?;
        let x_hat = stacked_features(&ds.hypergraph, &ds.features)?;

        let mut train_nodes: Vec<usize> = (0..ds.node_count()).filter(|&v| ds.train_mask[v]).collect();
        train_nodes.shuffle(&mut stream_rng(cfg.seed, Stream::Validation));
        let n_val = (cfg.val_fraction * train_nodes.len() as f64).floor() as usize;
        if n_val >= train_nodes.len() {
            return Err(Error::invalid("validation hold-out leaves no training nodes"));
        }
        let mut val_mask = vec![false; ds.node_count()];
        for &v in &train_nodes[..n_val] {
            val_mask[v] = true;
        }
        let fit_mask = ds.train_mask.iter().zip(&val_mask).map(|(&t, &v)| t && !v).collect();

        Ok(Self {
            hypergraph: ds.hypergraph.clone(),
            ops,
            x_hat,
            labels: ds.labels.clone(),
            num_classes: ds.num_classes,
            fit_mask,
            val_mask,
            test_mask: ds.test_mask.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.x_hat.cols()
    }
}

/// Draws `W` uniformly in `[−1/√d, 1/√d]` and projects it into the feasible
/// set; `U` and the heads are uniform with Glorot-style scale and `c = 0`.
pub fn init_params(
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
    kappa_radius: f64,
    seed: u64,
) -> Result<ModelParams> {
    if hidden_dim == 0 || classes == 0 {
        return Err(Error::invalid("hidden dimension and class count must be at least 1"));
    }
    let mut rng = stream_rng(seed, Stream::Init);
    let mut uniform = |rows: usize, cols: usize, scale: f64| {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
    };
    let d = hidden_dim;
    let mut w = uniform(d, d, 1.0 / (d as f64).sqrt());
    let u = uniform(input_dim, d, (6.0 / (input_dim + d) as f64).sqrt());
    let theta = uniform(2 * d, classes, (6.0 / (2 * d + classes) as f64).sqrt());
    let phi = uniform(1, 2 * d, (6.0 / (2 * d + 1) as f64).sqrt()).into_vec();
    project_rows_l1(&mut w, kappa_radius)?;
    Ok(ModelParams {
        w,
        u,
        c: vec![0.0; d],
        theta,
        theta_bias: vec![0.0; classes],
        phi,
        phi_bias: 0.0,
    })
}

/// Loss, direct head quantities and the full gradient at `params`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub heads: HeadGradients,
    pub grads: ModelParams,
    pub forward_iterations: usize,
    pub backward_iterations: usize,
}

/// Forward solve only; returns the equilibrium and node logits.
pub fn predict(params: &ModelParams, problem: &Problem, cfg: &TrainConfig) -> Result<(EmbeddingState, DenseMatrix)> {
    let b = affine_bias(&problem.x_hat, &params.u, &params.c)?;
    let state = forward_fixed_point(&problem.ops, &params.w, &b, cfg.activation, &cfg.forward)?;
    let logits = crate::model::classify(&problem.hypergraph, &state.z, &params.theta, &params.theta_bias)?;
    Ok((state, logits))
}

/// Value of `ℓ₁ + γℓ₂` at `params` for a fixed batch.
pub fn objective(params: &ModelParams, problem: &Problem, batch: &MembershipBatch, cfg: &TrainConfig) -> Result<f64> {
    let b = affine_bias(&problem.x_hat, &params.u, &params.c)?;
    let state = forward_fixed_point(&problem.ops, &params.w, &b, cfg.activation, &cfg.forward)?;
    let heads = head_gradients(
        &problem.hypergraph,
        &state.z,
        params,
        &problem.labels,
        &problem.fit_mask,
        Some(batch),
        cfg.gamma,
    )?;
    Ok(heads.total)
}

/// Full implicit gradient of `ℓ₁ + γℓ₂` for a fixed batch.
pub fn evaluate(
    params: &ModelParams,
    problem: &Problem,
    batch: &MembershipBatch,
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    let b = affine_bias(&problem.x_hat, &params.u, &params.c)?;
    let state = forward_fixed_point(&problem.ops, &params.w, &b, cfg.activation, &cfg.forward)?;
    let heads = head_gradients(
        &problem.hypergraph,
        &state.z,
        params,
        &problem.labels,
        &problem.fit_mask,
        Some(batch),
        cfg.gamma,
    )?;
    let adj = backward_adjoint(
        &problem.ops,
        &params.w,
        &b,
        &state.z,
        &heads.grad_z,
        cfg.activation,
        &cfg.backward,
    )?;
    let pg = param_gradients(&problem.ops, &state.z, &adj.g, &adj.d_mask, &problem.x_hat)?;
    let grads = ModelParams {
        w: pg.w,
        u: pg.u,
        c: pg.c,
        theta: heads.grad_theta.clone(),
        theta_bias: heads.grad_theta_bias.clone(),
        phi: heads.grad_phi.clone(),
        phi_bias: heads.grad_phi_bias,
    };
    Ok(Evaluation {
        heads,
        grads,
        forward_iterations: state.iterations_used,
        backward_iterations: adj.iterations_used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub class_loss: f64,
    pub member_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub forward_iterations: usize,
    pub backward_iterations: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
}

/// Gradient step with optional heavy-ball momentum.
fn sgd_step(params: &mut ModelParams, grads: &ModelParams, velocity: &mut ModelParams, lr: f64, momentum: f64) {
    if lr == 0.0 {
        return;
    }
    for (((_, p), (_, g)), (_, v)) in params
        .groups_mut()
        .into_iter()
        .zip(grads.groups())
        .zip(velocity.groups_mut())
    {
        if momentum == 0.0 {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        } else {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

/// One full-graph epoch. Feasibility of `W` holds on exit.
pub fn train_epoch(
    params: &mut ModelParams,
    velocity: &mut ModelParams,
    problem: &Problem,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochRecord> {
    let start = Instant::now();
    let wrap = |e: Error| Error::Epoch {
        epoch,
        source: Box::new(e),
    };
    let batch = sample_membership(&problem.hypergraph, cfg.batch_size, rng);
    let eval = evaluate(params, problem, &batch, cfg).map_err(wrap)?;

    sgd_step(params, &eval.grads, velocity, cfg.learning_rate, cfg.momentum);
    project_rows_l1(&mut params.w, problem.ops.kappa_radius).map_err(wrap)?;
    if !params.is_finite() {
        return Err(wrap(Error::NonFinite("parameters after gradient step")));
    }
    let factor = inf_norm(&params.w)? * problem.ops.opnorm_a;
    debug_assert!(
        factor <= cfg.kappa + FEASIBILITY_SLACK,
        "projection left W infeasible: {factor}"
    );

    let heads = &eval.heads;
    Ok(EpochRecord {
        epoch,
        total_loss: heads.total,
        class_loss: heads.class_loss,
        member_loss: heads.member_loss,
        train_accuracy: accuracy(&heads.logits, &problem.labels, &problem.fit_mask),
        val_accuracy: accuracy(&heads.logits, &problem.labels, &problem.val_mask),
        forward_iterations: eval.forward_iterations,
        backward_iterations: eval.backward_iterations,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Owns the mutable state of a training run.
pub struct Trainer<'a> {
    problem: &'a Problem,
    cfg: TrainConfig,
    params: ModelParams,
    velocity: ModelParams,
    sampler: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(problem: &'a Problem, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(
            problem.input_dim(),
            cfg.hidden_dim,
            problem.num_classes,
            problem.ops.kappa_radius,
            cfg.seed,
        )?;
        Ok(Self::with_params(problem, cfg, params))
    }

    pub fn with_params(problem: &'a Problem, cfg: TrainConfig, params: ModelParams) -> Self {
        let velocity = ModelParams::zeros(params.input_dim(), params.hidden_dim(), params.classes());
        let sampler = stream_rng(cfg.seed, Stream::Sampler);
        Self {
            problem,
            cfg,
            params,
            velocity,
            sampler,
            epoch: 0,
        }
    }

    pub fn step(&mut self) -> Result<EpochRecord> {
        self.epoch += 1;
        train_epoch(
            &mut self.params,
            &mut self.velocity,
            self.problem,
            &self.cfg,
            &mut self.sampler,
            self.epoch,
        )
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// Runs `cfg.epochs` epochs from a fresh initialization.
pub fn train(problem: &Problem, cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    train_with(problem, cfg, |_| {})
}

/// [`train`] with a per-epoch callback (logging, progress).
pub fn train_with(
    problem: &Problem,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainReport)> {
    let mut trainer = Trainer::new(problem, cfg.clone())?;
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        let rec = trainer.step()?;
        on_epoch(&rec);
        report.records.push(rec);
    }
    Ok((trainer.into_params(), report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Smallest admissible |pre-activation| under ReLU.
    pub kink_margin: f64,
    pub max_parameters: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            kink_margin: 1e-3,
            max_parameters: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub group: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, abs_tol / rel_tol)` over all parameters.
    pub max_error: f64,
    pub per_group: Vec<(&'static str, f64)>,
    pub worst: Option<GradCheckEntry>,
    pub entries: Vec<GradCheckEntry>,
    pub checked: usize,
}

impl GradCheckReport {
    /// True when every coordinate is within `max(rel_tol·scale, abs_tol)`.
    pub fn passes(&self, cfg: &GradCheckConfig) -> bool {
        self.max_error <= cfg.rel_tol
    }
}

/// Error scaled so that `≤ rel_tol` means `|a − n| ≤ max(rel_tol·max(|a|,|n|), abs_tol)`.
pub fn scaled_error(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(abs_tol / rel_tol);
    (analytic - numeric).abs() / scale
}

/// Smallest |pre-activation| at the fixed point.
pub fn kink_distance(params: &ModelParams, problem: &Problem, cfg: &TrainConfig) -> Result<f64> {
    let b = affine_bias(&problem.x_hat, &params.u, &params.c)?;
    let state = forward_fixed_point(&problem.ops, &params.w, &b, cfg.activation, &cfg.forward)?;
    let p = pre_activation(&problem.ops, &params.w, &b, &state.z)?;
    Ok(p.as_slice().iter().fold(f64::INFINITY, |m, x| m.min(x.abs())))
}

/// Compares the implicit gradient with central differences on every scalar
/// parameter.
pub fn gradient_check(
    params: &ModelParams,
    problem: &Problem,
    batch: &MembershipBatch,
    cfg: &TrainConfig,
    check: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let count = params.parameter_count();
    if count > check.max_parameters {
        return Err(Error::invalid(format!(
            "gradient check limited to {} parameters, model has {count}",
            check.max_parameters
        )));
    }
    if cfg.activation == Activation::Relu {
        let min_abs = kink_distance(params, problem, cfg)?;
        if min_abs < check.kink_margin {
            return Err(Error::KinkProximity {
                margin: check.kink_margin,
                min_abs,
            });
        }
    }
    let analytic = evaluate(params, problem, batch, cfg)?.grads;

    let mut entries = Vec::with_capacity(count);
    let mut probe = params.clone();
    for (g, (name, grad)) in analytic.groups().into_iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let original = probe.groups()[g].1[i];
            probe.groups_mut()[g].1[i] = original + check.epsilon;
            let plus = objective(&probe, problem, batch, cfg)?;
            probe.groups_mut()[g].1[i] = original - check.epsilon;
            let minus = objective(&probe, problem, batch, cfg)?;
            probe.groups_mut()[g].1[i] = original;
            let numeric = (plus - minus) / (2.0 * check.epsilon);
            entries.push(GradCheckEntry {
                group: name,
                index: i,
                analytic: a,
                numeric,
                error: scaled_error(a, numeric, check.rel_tol, check.abs_tol),
            });
        }
    }

    let mut per_group: Vec<(&'static str, f64)> = Vec::new();
    for e in &entries {
        match per_group.iter_mut().find(|(n, _)| *n == e.group) {
            Some((_, m)) => *m = m.max(e.error),
            None => per_group.push((e.group, e.error)),
        }
    }
    let worst = entries.iter().max_by(|a, b| a.error.total_cmp(&b.error)).cloned();
    Ok(GradCheckReport {
        max_error: worst.as_ref().map_or(0.0, |w| w.error),
        per_group,
        worst,
        checked: entries.len(),
        entries,
    })
}
