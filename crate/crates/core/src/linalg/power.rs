use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Estimates the largest singular value of `a` by power iteration on `aᵀa`.
///
/// The start vector is drawn from `seed`. Iteration stops once the
/// Rayleigh estimate of `σ²` changes by less than `tol` relative to itself.
/// A matrix with no nonzeros returns 0.
pub fn opnorm_power_iteration(a: &SparseMatrix, tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::invalid("operator norm of an empty matrix"));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::invalid("power iteration needs tol > 0 and max_iter >= 1"));
    }
    if a.nnz() == 0 {
        return Ok(0.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..a.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    if !normalize(&mut x) {
        x.iter_mut().for_each(|v| *v = 1.0);
        normalize(&mut x);
    }

    let mut estimate = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let y = a.mul_vec(&x)?;
        let mut z = a.mul_vec_t(&y)?;
        // ‖x‖ = 1, so xᵀaᵀax = ‖ax‖²
        let rayleigh: f64 = y.iter().map(|v| v * v).sum();
        if rayleigh == 0.0 {
            // x landed in the null space; all of aᵀa's mass is elsewhere
            x = (0..a.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
            normalize(&mut x);
            continue;
        }
        change = (rayleigh - estimate).abs();
        let converged = change <= tol * rayleigh;
        estimate = rayleigh;
        if converged {
            return Ok(estimate.sqrt());
        }
        if !normalize(&mut z) {
            return Ok(estimate.sqrt());
        }
        x = z;
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: max_iter,
        estimate: estimate.sqrt(),
        residual: change / estimate.max(f64::MIN_POSITIVE),
    })
}

fn normalize(x: &mut [f64]) -> bool {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    #[test]
    fn identity_has_unit_norm() {
        let s = opnorm_power_iteration(&SparseMatrix::identity(4), 1e-12, 100, 7).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_picks_largest_entry() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 0, 3.0), (1, 1, 1.0)]).unwrap();
        let s = opnorm_power_iteration(&a, 1e-14, 1000, 1).unwrap();
        assert!((s - 3.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn non_convergence_carries_last_estimate() {
        let a = SparseMatrix::from_dense(
            &DenseMatrix::from_rows(&[[1.0, 0.2, 0.0], [0.2, 0.99, 0.1], [0.0, 0.1, 0.98]]).unwrap(),
        );
        match opnorm_power_iteration(&a, 1e-15, 2, 3) {
            Err(Error::NotConverged {
                iterations, estimate, ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(estimate > 0.0);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_estimate() {
        let a = SparseMatrix::from_triplets(3, 2, [(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.5)]).unwrap();
        let s1 = opnorm_power_iteration(&a, 1e-6, 1000, 11).unwrap();
        let s2 = opnorm_power_iteration(&a, 1e-6, 1000, 11).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
    }
}
