//! Parameters, the affine input map, the two prediction heads and their losses.
//!
//! The classifier reads, for node `v`, the vector `h_v = [z_v, mean_{e ∋ v} z_e]`
//! and applies a linear layer. The membership head is a logistic unit on
//! `[z_e, z_v]` for sampled (hyperedge, node) pairs.

use crate::equilibrium::sigmoid;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::linalg::{dot, DenseMatrix};
use rand::Rng;

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Equilibrium weight, d×d.
    pub w: DenseMatrix,
    /// Affine input map `b_Ω(X̂) = X̂ U + 1cᵀ`; `U` is d_in×d.
    pub u: DenseMatrix,
    pub c: Vec<f64>,
    /// Classifier weights, 2d×C.
    pub theta: DenseMatrix,
    pub theta_bias: Vec<f64>,
    /// Membership weights over `[z_e, z_v]`, length 2d.
    pub phi: Vec<f64>,
    pub phi_bias: f64,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(hidden_dim, hidden_dim),
            u: DenseMatrix::zeros(input_dim, hidden_dim),
            c: vec![0.0; hidden_dim],
            theta: DenseMatrix::zeros(2 * hidden_dim, classes),
            theta_bias: vec![0.0; classes],
            phi: vec![0.0; 2 * hidden_dim],
            phi_bias: 0.0,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn classes(&self) -> usize {
        self.theta.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w.as_slice().len()
            + self.u.as_slice().len()
            + self.c.len()
            + self.theta.as_slice().len()
            + self.theta_bias.len()
            + self.phi.len()
            + 1
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite()
            && self.u.is_finite()
            && self.theta.is_finite()
            && self
                .c
                .iter()
                .chain(&self.theta_bias)
                .chain(&self.phi)
                .all(|v| v.is_finite())
            && self.phi_bias.is_finite()
    }

    /// Every parameter group as a flat slice, in a fixed order.
    pub fn groups(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("W", self.w.as_slice()),
            ("U", self.u.as_slice()),
            ("c", &self.c),
            ("theta", self.theta.as_slice()),
            ("theta_bias", &self.theta_bias),
            ("phi", &self.phi),
            ("phi_bias", std::slice::from_ref(&self.phi_bias)),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            ("W", self.w.as_mut_slice()),
            ("U", self.u.as_mut_slice()),
            ("c", &mut self.c),
            ("theta", self.theta.as_mut_slice()),
            ("theta_bias", &mut self.theta_bias),
            ("phi", &mut self.phi),
            ("phi_bias", std::slice::from_mut(&mut self.phi_bias)),
        ]
    }
}

/// `B = X̂ U + 1cᵀ`.
pub fn affine_bias(x_hat: &DenseMatrix, u: &DenseMatrix, c: &[f64]) -> Result<DenseMatrix> {
    let mut b = x_hat.matmul(u)?;
    b.add_row_broadcast(c)?;
    Ok(b)
}

/// Hyperedge features as the mean of member-node feature rows.
pub fn build_edge_features(hg: &Hypergraph, x_v: &DenseMatrix) -> Result<DenseMatrix> {
    if x_v.rows() != hg.node_count() {
        return Err(Error::DimensionMismatch {
            op: "build_edge_features",
            left: x_v.shape(),
            right: (hg.node_count(), x_v.cols()),
        });
    }
    let mut x_e = DenseMatrix::zeros(hg.edge_count(), x_v.cols());
    for (e, members) in hg.hyperedges().iter().enumerate() {
        let inv = 1.0 / members.len() as f64;
        let row = x_e.row_mut(e);
        for &v in members {
            for (o, x) in row.iter_mut().zip(x_v.row(v)) {
                *o += x;
            }
        }
        row.iter_mut().for_each(|o| *o *= inv);
    }
    Ok(x_e)
}

/// `X̂ = [X_v; X_e]`.
pub fn stacked_features(hg: &Hypergraph, x_v: &DenseMatrix) -> Result<DenseMatrix> {
    x_v.vstack(&build_edge_features(hg, x_v)?)
}

/// `h_v = [z_v, mean_{e ∋ v} z_e]` for every node; isolated nodes pool zeros.
pub fn node_representations(hg: &Hypergraph, z: &DenseMatrix) -> Result<DenseMatrix> {
    let n = hg.node_count();
    if z.rows() != n + hg.edge_count() {
        return Err(Error::DimensionMismatch {
            op: "node_representations",
            left: z.shape(),
            right: (n + hg.edge_count(), z.cols()),
        });
    }
    let d = z.cols();
    let mut h = DenseMatrix::zeros(n, 2 * d);
    for v in 0..n {
        let row = h.row_mut(v);
        row[..d].copy_from_slice(z.row(v));
        let edges = hg.edges_of(v);
        if edges.is_empty() {
            continue;
        }
        let inv = 1.0 / edges.len() as f64;
        let pooled = &mut row[d..];
        for &e in edges {
            for (p, x) in pooled.iter_mut().zip(z.row(n + e)) {
                *p += x;
            }
        }
        pooled.iter_mut().for_each(|p| *p *= inv);
    }
    Ok(h)
}

/// Node logits `h_v θ + bias`.
pub fn classify(hg: &Hypergraph, z: &DenseMatrix, theta: &DenseMatrix, bias: &[f64]) -> Result<DenseMatrix> {
    let h = node_representations(hg, z)?;
    let mut logits = h.matmul(theta)?;
    logits.add_row_broadcast(bias)?;
    Ok(logits)
}

/// Mean softmax cross-entropy over masked rows and its gradient with
/// respect to the logits (zero outside the mask).
pub fn classification_loss(logits: &DenseMatrix, labels: &[usize], mask: &[bool]) -> Result<(f64, DenseMatrix)> {
    if labels.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(Error::invalid(format!(
            "{} logit rows but {} labels and {} mask entries",
            logits.rows(),
            labels.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::invalid("classification loss needs at least one training node"));
    }
    let classes = logits.cols();
    let scale = 1.0 / count as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (i, (&y, _)) in labels.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m) {
        if y >= classes {
            return Err(Error::invalid(format!(
                "label {y} at row {i} exceeds class count {classes}"
            )));
        }
        let row = logits.row(i);
        let (arg, max) =
            row.iter().copied().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
            );
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != arg)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let log_norm = rest.ln_1p();
        total += (max - row[y]) + log_norm;
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - max - log_norm).exp();
            *gj = scale * (p - if j == y { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, grad))
}

/// One sampled (hyperedge, node) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MembershipPair {
    pub edge: usize,
    pub node: usize,
    pub member: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MembershipBatch {
    pub pairs: Vec<MembershipPair>,
}

impl MembershipBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Draws `batch_size` hyperedges uniformly with replacement; for each, a
/// uniform member with probability ½, otherwise a uniform non-member. A
/// hyperedge covering every node always yields a member.
pub fn sample_membership<R: Rng + ?Sized>(hg: &Hypergraph, batch_size: usize, rng: &mut R) -> MembershipBatch {
    let n = hg.node_count();
    let e_count = hg.edge_count();
    if e_count == 0 || batch_size == 0 {
        return MembershipBatch::default();
    }
    let pairs = (0..batch_size)
        .map(|_| {
            let edge = rng.random_range(0..e_count);
            let members = hg.edge(edge);
            let want_member = rng.random_bool(0.5);
            if want_member || members.len() == n {
                let node = members[rng.random_range(0..members.len())];
                MembershipPair {
                    edge,
                    node,
                    member: true,
                }
            } else {
                let k = rng.random_range(0..n - members.len());
                MembershipPair {
                    edge,
                    node: kth_non_member(members, k),
                    member: false,
                }
            }
        })
        .collect();
    MembershipBatch { pairs }
}

/// The `k`-th (0-based) integer absent from the sorted `members`.
fn kth_non_member(members: &[usize], k: usize) -> usize {
    let mut candidate = k;
    for &m in members {
        if m <= candidate {
            candidate += 1;
        } else {
            break;
        }
    }
    candidate
}

/// Value and gradients of the membership loss.
#[derive(Debug, Clone)]
pub struct MembershipLoss {
    pub loss: f64,
    /// Gradient with respect to every row of `Ẑ` (only sampled rows nonzero).
    pub grad_z: DenseMatrix,
    pub grad_phi: Vec<f64>,
    pub grad_phi_bias: f64,
}

/// Mean binary cross-entropy of `σ(φ·[z_e, z_v] + b)` against membership.
pub fn membership_loss(
    z: &DenseMatrix,
    node_count: usize,
    batch: &MembershipBatch,
    phi: &[f64],
    phi_bias: f64,
) -> Result<MembershipLoss> {
    let d = z.cols();
    if phi.len() != 2 * d {
        return Err(Error::DimensionMismatch {
            op: "membership head",
            left: (phi.len(), 1),
            right: (2 * d, 1),
        });
    }
    if batch.is_empty() {
        return Err(Error::invalid("membership batch is empty"));
    }
    let (phi_e, phi_v) = phi.split_at(d);
    let scale = 1.0 / batch.len() as f64;
    let mut grad_z = DenseMatrix::zeros(z.rows(), d);
    let mut grad_phi = vec![0.0; 2 * d];
    let mut grad_phi_bias = 0.0;
    let mut total = 0.0;
    for pair in &batch.pairs {
        let e_row = node_count + pair.edge;
        let z_e = z.row(e_row);
        let z_v = z.row(pair.node);
        let s = dot(phi_e, z_e) + dot(phi_v, z_v) + phi_bias;
        let y = if pair.member { 1.0 } else { 0.0 };
        total += s.max(0.0) - y * s + (-s.abs()).exp().ln_1p();
        let ds = scale * (sigmoid(s) - y);
        for k in 0..d {
            grad_phi[k] += ds * z_e[k];
            grad_phi[d + k] += ds * z_v[k];
        }
        grad_phi_bias += ds;
        for (g, p) in grad_z.row_mut(e_row).iter_mut().zip(phi_e) {
            *g += ds * p;
        }
        for (g, p) in grad_z.row_mut(pair.node).iter_mut().zip(phi_v) {
            *g += ds * p;
        }
    }
    Ok(MembershipLoss {
        loss: total * scale,
        grad_z,
        grad_phi,
        grad_phi_bias,
    })
}

/// Both losses at a fixed `Ẑ`, with the gradient of `ℓ₁ + γℓ₂` with respect
/// to `Ẑ` and the two heads.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub total: f64,
    pub class_loss: f64,
    pub member_loss: f64,
    pub logits: DenseMatrix,
    /// `∇̄_Ẑ`, the direct gradient with `Ẑ` held fixed.
    pub grad_z: DenseMatrix,
    pub grad_theta: DenseMatrix,
    pub grad_theta_bias: Vec<f64>,
    pub grad_phi: Vec<f64>,
    pub grad_phi_bias: f64,
}

/// Evaluates `ℓ₁ + γℓ₂` and the closed-form gradients through both linear
/// heads. With `γ = 0` the membership loss is still evaluated (when a batch
/// is given) but contributes nothing to any gradient.
pub fn head_gradients(
    hg: &Hypergraph,
    z: &DenseMatrix,
    params: &ModelParams,
    labels: &[usize],
    train_mask: &[bool],
    batch: Option<&MembershipBatch>,
    gamma: f64,
) -> Result<HeadGradients> {
    let n = hg.node_count();
    let d = z.cols();
    let h = node_representations(hg, z)?;
    let mut logits = h.matmul(&params.theta)?;
    logits.add_row_broadcast(&params.theta_bias)?;
    let (class_loss, dlogits) = classification_loss(&logits, labels, train_mask)?;

    let grad_theta = h.t_matmul(&dlogits)?;
    let grad_theta_bias = dlogits.column_sums();
    let dh = dlogits.matmul_t(&params.theta)?;

    let mut grad_z = DenseMatrix::zeros(z.rows(), d);
    for v in 0..n {
        if !train_mask[v] {
            continue;
        }
        let dh_v = dh.row(v);
        for (g, x) in grad_z.row_mut(v).iter_mut().zip(&dh_v[..d]) {
            *g += x;
        }
        let edges = hg.edges_of(v);
        if edges.is_empty() {
            continue;
        }
        let inv = 1.0 / edges.len() as f64;
        for &e in edges {
            for (g, x) in grad_z.row_mut(n + e).iter_mut().zip(&dh_v[d..]) {
                *g += inv * x;
            }
        }
    }

    let mut member_loss = 0.0;
    let mut grad_phi = vec![0.0; params.phi.len()];
    let mut grad_phi_bias = 0.0;
    if let Some(batch) = batch.filter(|b| !b.is_empty()) {
        let m = membership_loss(z, n, batch, &params.phi, params.phi_bias)?;
        member_loss = m.loss;
        if gamma != 0.0 {
            grad_z.scaled_add(gamma, &m.grad_z)?;
            grad_phi = m.grad_phi.iter().map(|g| gamma * g).collect();
            grad_phi_bias = gamma * m.grad_phi_bias;
        }
    }

    Ok(HeadGradients {
        total: class_loss + gamma * member_loss,
        class_loss,
        member_loss,
        logits,
        grad_z,
        grad_theta,
        grad_theta_bias,
        grad_phi,
        grad_phi_bias,
    })
}

/// Fraction of masked rows whose arg-max logit equals the label.
pub fn accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[bool]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (i, (&y, &m)) in labels.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        total += 1;
        if argmax(logits.row(i)) == y {
            hit += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
        )
        .0
}
