//! Euclidean projection onto the ℓ1 ball, row by row.
//!
//! The sort-based method finds the soft-threshold `τ` such that
//! `Σ max(|v_i| − τ, 0) = r` and returns `sign(v) · max(|v| − τ, 0)`.
//! Projecting every row of `W` independently onto the ball of radius `r`
//! gives the Frobenius-nearest matrix with `‖W‖_∞ ≤ r`.

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

/// ℓ1 norm with a fixed left-to-right summation order. Feasibility checks
/// and `inf_norm` both go through here so they agree bit for bit.
#[inline]
pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Projects `v` onto `{u : ‖u‖₁ ≤ radius}`.
///
/// Feasible inputs come back unchanged bit for bit; the output of a
/// projection is itself feasible under [`l1_norm`], which makes the map
/// idempotent.
pub fn project_row_l1(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    project_row_l1_in_place(&mut out, radius)?;
    Ok(out)
}

/// In-place variant of [`project_row_l1`]. Returns whether the row changed.
pub fn project_row_l1_in_place(v: &mut [f64], radius: f64) -> Result<bool> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!(
            "projection radius must be positive, got {radius}"
        )));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("project_row_l1"));
    }
    if l1_norm(v) <= radius {
        return Ok(false);
    }
    if v.iter().any(|x| x.is_infinite()) {
        return Err(Error::NonFinite("project_row_l1"));
    }

    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if m > candidate {
            tau = candidate;
        } else {
            break;
        }
    }

    let shrink = |tau: f64, v: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(v.iter().map(|&x| x.signum() * (x.abs() - tau).max(0.0)));
    };
    let mut projected = Vec::with_capacity(v.len());
    shrink(tau, v, &mut projected);
    // rounding can leave the sum a few ulps above the radius; nudge τ up
    let mut step = f64::EPSILON * tau.abs().max(f64::MIN_POSITIVE);
    while l1_norm(&projected) > radius {
        tau += step;
        step *= 2.0;
        shrink(tau, v, &mut projected);
    }
    v.copy_from_slice(&projected);
    Ok(true)
}

/// Projects each row of `w` onto the ℓ1 ball of `radius`, leaving feasible
/// rows untouched. Returns the number of rows that moved.
pub fn project_rows_l1(w: &mut DenseMatrix, radius: f64) -> Result<usize> {
    let mut moved = 0;
    for i in 0..w.rows() {
        if project_row_l1_in_place(w.row_mut(i), radius)? {
            moved += 1;
        }
    }
    Ok(moved)
}

/// Matrix infinity norm: the largest absolute row sum.
pub fn inf_norm(w: &DenseMatrix) -> Result<f64> {
    if w.as_slice().iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("inf_norm"));
    }
    Ok(w.row_iter().map(l1_norm).fold(0.0, f64::max))
}
