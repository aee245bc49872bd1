//! Forward fixed-point solve of `Ẑ = σ(Ā Ẑ W + B)` and the adjoint solve
//! that yields `∂𝓛/∂Ẑ` without unrolling the forward iterations.
//!
//! Writing `P = Ā Ẑ W + B` and `D = σ'(P)`, the total derivative of a loss
//! with direct gradient `∇̄` at the fixed point satisfies
//!
//! ```text
//! G = Āᵀ (D ⊙ G) Wᵀ + ∇̄
//! ```
//!
//! and the parameter gradients follow from `D ⊙ G`:
//! `∂W = (Ā Ẑ)ᵀ (D ⊙ G)`, `∂U = X̂ᵀ (D ⊙ G)`, `∂c = 1ᵀ (D ⊙ G)`.
//!
//! Both maps are contractions when `‖W‖_∞ ‖Ā‖_op < 1`: the forward map in
//! the norm `Σ_j ‖Z_{:,j}‖₂` and the adjoint map in `max_j ‖G_{:,j}‖₂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::NormalizedOperators;
use crate::linalg::{inf_norm, spmm, DenseMatrix};

/// Entrywise non-expansive activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stopping rule shared by the forward and adjoint solvers: stop once the
/// largest entrywise change between successive iterates is at most `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub fn new(tol: f64, max_iter: usize) -> Result<Self> {
        let cfg = Self { tol, max_iter };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn forward_default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 300,
        }
    }

    pub fn backward_default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid(format!(
                "solver needs tol > 0 and max_iter >= 1 (got tol {}, max_iter {})",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Converged stacked embeddings `Ẑ = [Z_v; Z_e]`.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub z: DenseMatrix,
    pub iterations_used: usize,
    pub final_residual: f64,
    /// Max-abs change per iteration (the stopping quantity).
    pub residual_trace: Vec<f64>,
    /// `Σ_j ‖ΔZ_{:,j}‖₂` per iteration, the norm the contraction bound holds in.
    pub contraction_trace: Vec<f64>,
}

impl EmbeddingState {
    pub fn node_rows(&self, n: usize) -> DenseMatrix {
        self.z.slice_rows(0, n)
    }

    pub fn edge_rows(&self, n: usize) -> DenseMatrix {
        self.z.slice_rows(n, self.z.rows())
    }
}

/// Returns `‖W‖_∞ · ‖Ā‖_op` after checking it is below 1.
pub fn check_contraction(ops: &NormalizedOperators, w: &DenseMatrix) -> Result<f64> {
    let w_inf = inf_norm(w)?;
    let factor = w_inf * ops.opnorm_a;
    if !(factor < 1.0) {
        return Err(Error::ContractionViolated {
            w_inf,
            opnorm: ops.opnorm_a,
        });
    }
    Ok(factor)
}

fn check_shapes(ops: &NormalizedOperators, w: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if w.rows() != w.cols() {
        return Err(Error::DimensionMismatch {
            op: "equilibrium weight must be square",
            left: w.shape(),
            right: w.shape(),
        });
    }
    if b.rows() != ops.total_rows() || b.cols() != w.cols() {
        return Err(Error::DimensionMismatch {
            op: "equilibrium bias",
            left: b.shape(),
            right: (ops.total_rows(), w.cols()),
        });
    }
    Ok(())
}

/// `Ā Ẑ W + B`.
pub fn pre_activation(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    z: &DenseMatrix,
) -> Result<DenseMatrix> {
    let mut p = spmm(&ops.a_block, z)?.matmul(w)?;
    p.add_assign(b)?;
    Ok(p)
}

/// One application of the block map `σ(Ā Ẑ W + B)`.
pub fn block_map(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    act: Activation,
    z: &DenseMatrix,
) -> Result<DenseMatrix> {
    Ok(pre_activation(ops, w, b, z)?.map(|x| act.apply(x)))
}

fn column_norm_sum(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let mut sq = vec![0.0; a.cols()];
    for (ra, rb) in a.row_iter().zip(b.row_iter()) {
        for ((s, x), y) in sq.iter_mut().zip(ra).zip(rb) {
            let d = x - y;
            *s += d * d;
        }
    }
    sq.into_iter().map(f64::sqrt).sum()
}

fn diverged(iterations: usize, trace: &[f64]) -> Error {
    let tail = trace[trace.len().saturating_sub(5)..].to_vec();
    Error::SolverDiverged {
        iterations,
        trace_tail: tail,
    }
}

/// Solves `Ẑ = σ(Ā Ẑ W + B)` by fixed-point iteration from `Ẑ₀ = 0`.
pub fn forward_fixed_point(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    act: Activation,
    cfg: &SolverConfig,
) -> Result<EmbeddingState> {
    let z0 = DenseMatrix::zeros(ops.total_rows(), w.cols());
    forward_fixed_point_from(ops, w, b, act, cfg, z0)
}

/// Same as [`forward_fixed_point`] from an arbitrary starting iterate.
pub fn forward_fixed_point_from(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    act: Activation,
    cfg: &SolverConfig,
    z0: DenseMatrix,
) -> Result<EmbeddingState> {
    cfg.validate()?;
    check_shapes(ops, w, b)?;
    check_contraction(ops, w)?;
    if z0.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "initial iterate",
            left: z0.shape(),
            right: b.shape(),
        });
    }

    let mut z = z0;
    let mut residual_trace = Vec::new();
    let mut contraction_trace = Vec::new();
    for k in 1..=cfg.max_iter {
        let next = block_map(ops, w, b, act, &z)?;
        let residual = next.max_abs_diff(&z)?;
        if !residual.is_finite() {
            return Err(Error::NonFinite("forward fixed-point iterate"));
        }
        contraction_trace.push(column_norm_sum(&next, &z));
        residual_trace.push(residual);
        z = next;
        if residual <= cfg.tol {
            return Ok(EmbeddingState {
                z,
                iterations_used: k,
                final_residual: residual,
                residual_trace,
                contraction_trace,
            });
        }
    }
    Err(diverged(cfg.max_iter, &residual_trace))
}

/// Update order for the two-block node/hyperedge iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoupledSchedule {
    /// Both blocks read the previous iterate (Jacobi order).
    Simultaneous,
    /// The hyperedge update reads the freshly updated node block.
    Alternating,
}

/// Iterates the coupled updates
///
/// ```text
/// Z_v ← σ(L_ve Z_e W + B_v)
/// Z_e ← σ(L_veᵀ Z_v W + B_e)
/// ```
///
/// with separate node and hyperedge operators instead of the block matrix.
pub fn coupled_fixed_point(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    act: Activation,
    cfg: &SolverConfig,
    schedule: CoupledSchedule,
) -> Result<EmbeddingState> {
    cfg.validate()?;
    check_shapes(ops, w, b)?;
    check_contraction(ops, w)?;
    let n = ops.node_count();
    let d = w.cols();
    let b_v = b.slice_rows(0, n);
    let b_e = b.slice_rows(n, b.rows());

    let update = |op: &crate::linalg::SparseMatrix, src: &DenseMatrix, bias: &DenseMatrix| -> Result<DenseMatrix> {
        let mut p = spmm(op, src)?.matmul(w)?;
        p.add_assign(bias)?;
        Ok(p.map(|x| act.apply(x)))
    };

    let mut z_v = DenseMatrix::zeros(n, d);
    let mut z_e = DenseMatrix::zeros(ops.edge_count(), d);
    let mut residual_trace = Vec::new();
    let mut contraction_trace = Vec::new();
    for k in 1..=cfg.max_iter {
        let (next_v, next_e) = match schedule {
            CoupledSchedule::Simultaneous => (update(&ops.l_ve, &z_e, &b_v)?, update(&ops.l_ev, &z_v, &b_e)?),
            CoupledSchedule::Alternating => {
                let next_v = update(&ops.l_ve, &z_e, &b_v)?;
                let next_e = update(&ops.l_ev, &next_v, &b_e)?;
                (next_v, next_e)
            }
        };
        let residual = next_v.max_abs_diff(&z_v)?.max(next_e.max_abs_diff(&z_e)?);
        if !residual.is_finite() {
            return Err(Error::NonFinite("coupled fixed-point iterate"));
        }
        let prev = z_v.vstack(&z_e)?;
        z_v = next_v;
        z_e = next_e;
        let stacked = z_v.vstack(&z_e)?;
        contraction_trace.push(column_norm_sum(&stacked, &prev));
        residual_trace.push(residual);
        if residual <= cfg.tol {
            return Ok(EmbeddingState {
                z: stacked,
                iterations_used: k,
                final_residual: residual,
                residual_trace,
                contraction_trace,
            });
        }
    }
    Err(diverged(cfg.max_iter, &residual_trace))
}

/// Result of the adjoint solve.
#[derive(Debug, Clone)]
pub struct AdjointState {
    /// `∂𝓛/∂Ẑ`.
    pub g: DenseMatrix,
    /// `σ'(Ā Ẑ W + B)` at the fixed point.
    pub d_mask: DenseMatrix,
    pub iterations_used: usize,
    pub final_residual: f64,
}

/// Activation derivative at the fixed point, `D = σ'(Ā Ẑ W + B)`.
pub fn activation_mask(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    z: &DenseMatrix,
    act: Activation,
) -> Result<DenseMatrix> {
    Ok(pre_activation(ops, w, b, z)?.map(|x| act.derivative(x)))
}

/// Solves `G = Āᵀ (D ⊙ G) Wᵀ + ∇̄` from `G₀ = ∇̄`.
pub fn backward_adjoint(
    ops: &NormalizedOperators,
    w: &DenseMatrix,
    b: &DenseMatrix,
    z: &DenseMatrix,
    grad_direct: &DenseMatrix,
    act: Activation,
    cfg: &SolverConfig,
) -> Result<AdjointState> {
    cfg.validate()?;
    check_shapes(ops, w, b)?;
    check_contraction(ops, w)?;
    if z.shape() != b.shape() || grad_direct.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "backward_adjoint",
            left: z.shape(),
            right: grad_direct.shape(),
        });
    }
    let d_mask = activation_mask(ops, w, b, z, act)?;

    // Ā is symmetric, so Āᵀ is applied through the same CSR arrays
    let mut g = grad_direct.clone();
    let mut trace = Vec::new();
    for k in 1..=cfg.max_iter {
        let masked = d_mask.hadamard(&g)?;
        let mut next = spmm(&ops.a_block, &masked)?.matmul_t(w)?;
        next.add_assign(grad_direct)?;
        let residual = next.max_abs_diff(&g)?;
        if !residual.is_finite() {
            return Err(Error::NonFinite("adjoint iterate"));
        }
        trace.push(residual);
        g = next;
        if residual <= cfg.tol {
            return Ok(AdjointState {
                g,
                d_mask,
                iterations_used: k,
                final_residual: residual,
            });
        }
    }
    Err(diverged(cfg.max_iter, &trace))
}

/// Gradients of the loss with respect to `W`, `U` and `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub w: DenseMatrix,
    pub u: DenseMatrix,
    pub c: Vec<f64>,
}

/// Chain rule from `∂𝓛/∂Ẑ` through `P = Ā Ẑ W + X̂ U + 1cᵀ`.
pub fn param_gradients(
    ops: &NormalizedOperators,
    z: &DenseMatrix,
    g: &DenseMatrix,
    d_mask: &DenseMatrix,
    x_hat: &DenseMatrix,
) -> Result<ParamGradients> {
    if x_hat.rows() != z.rows() {
        return Err(Error::DimensionMismatch {
            op: "param_gradients: stacked features",
            left: x_hat.shape(),
            right: z.shape(),
        });
    }
    let dg = d_mask.hadamard(g)?;
    let az = spmm(&ops.a_block, z)?;
    Ok(ParamGradients {
        w: az.t_matmul(&dg)?,
        u: x_hat.t_matmul(&dg)?,
        c: dg.column_sums(),
    })
}
