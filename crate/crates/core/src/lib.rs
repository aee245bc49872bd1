//! Implicit hypergraph neural network.
//!
//! Node and hyperedge embeddings are the fixed point of
//! `Ẑ = σ(Ā Ẑ W + b_Ω(X̂))`, where `Ā` couples nodes to the hyperedges that
//! contain them. Gradients flow through the fixed point by an adjoint
//! fixed-point solve, and `W` is kept inside `‖W‖_∞ ≤ κ / ‖Ā‖_op` by
//! row-wise ℓ1 projection so the map stays contractive.
//!
//! Modules, bottom-up:
//!
//! - [`linalg`]: dense/CSR kernels, power iteration, ℓ1-ball projection
//! - [`hypergraph`]: incidence structure, `L_ve`, the block operator `Ā`
//! - [`equilibrium`]: forward and adjoint fixed-point solvers
//! - [`model`]: parameters, input map, classifier and membership heads
//! - [`training`]: the projected-gradient training loop and gradient check
//! - [`baselines`]: stacked HGNN and MLP for the depth comparison
//! - [`data`]: dataset files, synthetic generator, splits

pub mod baselines;
pub mod data;
pub mod equilibrium;
pub mod error;
pub mod hypergraph;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
