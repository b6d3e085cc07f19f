//! Dense linear-algebra helpers shared by the solver and test modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default relative threshold for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Operator 2-norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.max()
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Uses the Schur-based eigenvalue computation for moderate sizes and a
/// power iteration fallback above that, where dense Schur becomes the
/// bottleneck.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.nrows() <= 512 {
        let eig = m.clone().complex_eigenvalues();
        Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
    } else {
        Ok(power_iteration_radius(m))
    }
}

fn power_iteration_radius(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut best = 0.0f64;
    for start in 0..3usize {
        let mut v = DVector::from_fn(d, |i, _| {
            let x = (i + 1 + 7 * start) as f64;
            (x * 12.9898).sin()
        });
        v /= v.norm();
        let mut estimate = 0.0;
        for _ in 0..200 {
            let w = m * &v;
            let n = w.norm();
            if n == 0.0 {
                estimate = 0.0;
                break;
            }
            estimate = n;
            v = w / n;
        }
        best = best.max(estimate);
    }
    best
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn eig_min_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.min()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn eig_max_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.max()
}

/// PSD test with a relative slack proportional to the matrix scale.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = op_norm(m).max(1.0);
    eig_min_symmetric(m) >= -rel_tol * scale
}

/// Numerical rank at a relative singular-value threshold.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > rel_tol * smax)
        .count()
}

/// Orthonormal basis of the (right) null space, returned as columns.
///
/// Wide matrices are padded with zero rows so the thin SVD still carries a
/// complete set of right singular vectors.
pub fn null_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let a = if m.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, m.nrows()).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("svd requested v_t");
    let smax = svd.singular_values.max();
    let mut keep = Vec::new();
    for i in 0..vt.nrows() {
        let s = if i < svd.singular_values.len() {
            svd.singular_values[i]
        } else {
            0.0
        };
        if smax == 0.0 || s <= rel_tol * smax {
            keep.push(i);
        }
    }
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &vt.row(i).transpose());
    }
    basis
}

/// Numerical rank of a complex matrix.
pub fn complex_rank(m: &DMatrix<Complex64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > rel_tol * smax)
        .count()
}

/// Solves `a * x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("Cholesky factorization failed on an SPD solve".into()))?;
    Ok(chol.solve(b))
}

/// Column-space equality via rank comparisons of the concatenation.
pub fn col_space_equal(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> bool {
    assert_eq!(a.nrows(), b.nrows(), "column spaces live in the same space");
    let ra = numerical_rank(a, rel_tol);
    let rb = numerical_rank(b, rel_tol);
    if ra != rb {
        return false;
    }
    let mut joint = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    joint.columns_mut(0, a.ncols()).copy_from(a);
    joint.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    numerical_rank(&joint, rel_tol) == ra
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_radius_examples() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.25]));
        assert_relative_eq!(spectral_radius(&diag).unwrap(), 0.5, epsilon = 1e-10);

        let nilpotent = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&nilpotent).unwrap() < 1e-10);

        let rotation = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&rotation).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_radius_rejects_non_square() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(spectral_radius(&m).is_err());
    }

    #[test]
    fn null_space_of_wide_matrix_is_complete() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let basis = null_space_basis(&m, DEFAULT_RANK_TOL);
        assert_eq!(basis.ncols(), 2);
        let residual = &m * &basis;
        assert!(op_norm(&residual) < 1e-12);
    }

    #[test]
    fn rank_and_col_space() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(numerical_rank(&a, DEFAULT_RANK_TOL), 1);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 0.0]);
        assert!(col_space_equal(&a, &b, DEFAULT_RANK_TOL));
    }
}
