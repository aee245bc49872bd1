//! Dense and CSR matrices plus the two numerical primitives the model needs
//! beyond multiplication: operator-norm estimation and ℓ1-ball projection.

mod dense;
mod power;
mod projection;
mod sparse;

pub use dense::{dot, DenseMatrix};
pub use power::opnorm_power_iteration;
pub use projection::{inf_norm, l1_norm, project_row_l1, project_row_l1_in_place, project_rows_l1};
pub use sparse::{spmm, SparseMatrix};
