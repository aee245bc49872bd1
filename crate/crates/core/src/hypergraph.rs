//! Hypergraph incidence structure and the normalized operators built on it.
//!
//! With incidence `H` (n×E), node degrees `D_v` and edge cardinalities `D_e`:
//!
//! ```text
//! L_ve = D_v^{-1/2} H D_e^{-1/2}           (n×E)
//! L    = L_ve L_veᵀ                         (n×n, the HGNN propagation matrix)
//! Ā    = [ 0      L_ve ]                    ((n+E)×(n+E), symmetric)
//!        [ L_veᵀ  0    ]
//! ```
//!
//! Node rows come first in Ā, so `Ā [Z_v; Z_e] = [L_ve Z_e; L_veᵀ Z_v]`.

use crate::error::{Error, Result};
use crate::linalg::{opnorm_power_iteration, DenseMatrix, SparseMatrix};

/// Immutable hypergraph over nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    node_count: usize,
    hyperedges: Vec<Vec<usize>>,
    node_degrees: Vec<usize>,
    edge_degrees: Vec<usize>,
    incidence: SparseMatrix,
    node_to_edges: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// Builds a hypergraph. Node ids inside an edge are sorted and
    /// deduplicated; repeated edges are kept as distinct hyperedges.
    pub fn new(node_count: usize, edges: Vec<Vec<usize>>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::invalid("hypergraph needs at least one node"));
        }
        let mut hyperedges = Vec::with_capacity(edges.len());
        for (e, mut members) in edges.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::invalid(format!("hyperedge {e} is empty")));
            }
            if let Some(&bad) = members.iter().find(|&&v| v >= node_count) {
                return Err(Error::invalid(format!(
                    "hyperedge {e} references node {bad}, but there are only {node_count} nodes"
                )));
            }
            members.sort_unstable();
            members.dedup();
            hyperedges.push(members);
        }

        let mut node_to_edges = vec![Vec::new(); node_count];
        for (e, members) in hyperedges.iter().enumerate() {
            for &v in members {
                node_to_edges[v].push(e);
            }
        }
        let node_degrees = node_to_edges.iter().map(Vec::len).collect();
        let edge_degrees = hyperedges.iter().map(Vec::len).collect();

        let mut indptr = Vec::with_capacity(node_count + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for edges in &node_to_edges {
            indices.extend_from_slice(edges);
            indptr.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        let incidence = SparseMatrix::from_csr(node_count, hyperedges.len(), indptr, indices, values)?;

        Ok(Self {
            node_count,
            hyperedges,
            node_degrees,
            edge_degrees,
            incidence,
            node_to_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn edge(&self, e: usize) -> &[usize] {
        &self.hyperedges[e]
    }

    pub fn node_degrees(&self) -> &[usize] {
        &self.node_degrees
    }

    pub fn edge_degrees(&self) -> &[usize] {
        &self.edge_degrees
    }

    /// Binary n×E incidence matrix.
    pub fn incidence(&self) -> &SparseMatrix {
        &self.incidence
    }

    /// Hyperedges containing node `v`, ascending.
    pub fn edges_of(&self, v: usize) -> &[usize] {
        &self.node_to_edges[v]
    }

    /// Total incidence `Σ_e |e|`.
    pub fn total_incidence(&self) -> usize {
        self.incidence.nnz()
    }

    pub fn max_edge_size(&self) -> usize {
        self.edge_degrees.iter().copied().max().unwrap_or(0)
    }

    pub fn contains(&self, e: usize, v: usize) -> bool {
        self.hyperedges[e].binary_search(&v).is_ok()
    }
}

#[inline]
fn inv_sqrt_degree(deg: usize) -> f64 {
    if deg == 0 {
        0.0
    } else {
        1.0 / (deg as f64).sqrt()
    }
}

/// `L_ve = D_v^{-1/2} H D_e^{-1/2}`; zero-degree nodes get zero rows.
pub fn build_lve(hg: &Hypergraph) -> SparseMatrix {
    let mut indptr = Vec::with_capacity(hg.node_count + 1);
    indptr.push(0);
    let mut indices = Vec::with_capacity(hg.total_incidence());
    let mut values = Vec::with_capacity(hg.total_incidence());
    for v in 0..hg.node_count {
        let dv = inv_sqrt_degree(hg.node_degrees[v]);
        for &e in &hg.node_to_edges[v] {
            indices.push(e);
            values.push(dv * inv_sqrt_degree(hg.edge_degrees[e]));
        }
        indptr.push(indices.len());
    }
    SparseMatrix::from_csr(hg.node_count, hg.edge_count(), indptr, indices, values)
        .expect("incidence structure is valid CSR")
}

/// Relative margin applied to the power-iteration estimate when forming the
/// feasibility radius. The Rayleigh estimate approaches `‖Ā‖_op` from below,
/// so without it a boundary `W` could contract by a hair more than κ.
pub const OPNORM_MARGIN: f64 = 1e-11;

/// Settings for the operator-norm estimate of Ā.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpnormConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for OpnormConfig {
    fn default() -> Self {
        Self {
            tol: 1e-14,
            max_iter: 20_000,
            seed: 0x5eed,
        }
    }
}

/// `L_ve`, its transpose, the block operator Ā and the feasibility radius
/// `κ / ‖Ā‖_op` for the equilibrium weight.
#[derive(Debug, Clone)]
pub struct NormalizedOperators {
    pub l_ve: SparseMatrix,
    pub l_ev: SparseMatrix,
    pub a_block: SparseMatrix,
    pub opnorm_a: f64,
    pub kappa: f64,
    pub kappa_radius: f64,
}

impl NormalizedOperators {
    pub fn node_count(&self) -> usize {
        self.l_ve.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.l_ve.cols()
    }

    /// Rows of the stacked embedding `Ẑ = [Z_v; Z_e]`.
    pub fn total_rows(&self) -> usize {
        self.l_ve.rows() + self.l_ve.cols()
    }

    pub fn from_hypergraph(hg: &Hypergraph, kappa: f64, cfg: &OpnormConfig) -> Result<Self> {
        build_block_operator(build_lve(hg), kappa, cfg)
    }
}

/// Assembles Ā with `L_ve` in the node-row/edge-column block and estimates
/// its operator norm.
pub fn build_block_operator(l_ve: SparseMatrix, kappa: f64, cfg: &OpnormConfig) -> Result<NormalizedOperators> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::invalid(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    let n = l_ve.rows();
    let e = l_ve.cols();
    let l_ev = l_ve.transpose();

    let total = n + e;
    let mut indptr = Vec::with_capacity(total + 1);
    indptr.push(0);
    let mut indices = Vec::with_capacity(2 * l_ve.nnz());
    let mut values = Vec::with_capacity(2 * l_ve.nnz());
    for v in 0..n {
        let (cols, vals) = l_ve.row(v);
        indices.extend(cols.iter().map(|&c| n + c));
        values.extend_from_slice(vals);
        indptr.push(indices.len());
    }
    for edge in 0..e {
        let (cols, vals) = l_ev.row(edge);
        indices.extend_from_slice(cols);
        values.extend_from_slice(vals);
        indptr.push(indices.len());
    }
    let a_block = SparseMatrix::from_csr(total, total, indptr, indices, values)?;

    let opnorm_a = opnorm_power_iteration(&a_block, cfg.tol, cfg.max_iter, cfg.seed)?;
    if !(opnorm_a > 0.0) {
        return Err(Error::invalid(
            "block operator is zero: the hypergraph has no incidences",
        ));
    }
    Ok(NormalizedOperators {
        l_ve,
        l_ev,
        a_block,
        opnorm_a,
        kappa,
        kappa_radius: kappa / (opnorm_a * (1.0 + OPNORM_MARGIN)),
    })
}

/// Largest node count accepted by [`dense_laplacian_oracle`].
pub const DENSE_ORACLE_MAX_NODES: usize = 2000;

/// Dense `D_v^{-1/2} H D_e^{-1} Hᵀ D_v^{-1/2}`, evaluated entry by entry from
/// the edge lists. Test-scale reference only.
pub fn dense_laplacian_oracle(hg: &Hypergraph) -> Result<DenseMatrix> {
    let n = hg.node_count();
    if n > DENSE_ORACLE_MAX_NODES {
        return Err(Error::invalid(format!(
            "dense Laplacian oracle limited to {DENSE_ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    let mut l = DenseMatrix::zeros(n, n);
    for members in hg.hyperedges() {
        let inv_e = 1.0 / members.len() as f64;
        for &a in members {
            for &b in members {
                l[(a, b)] += inv_e;
            }
        }
    }
    let scale: Vec<f64> = hg.node_degrees().iter().map(|&d| inv_sqrt_degree(d)).collect();
    for a in 0..n {
        for b in 0..n {
            l[(a, b)] *= scale[a] * scale[b];
        }
    }
    Ok(l)
}
