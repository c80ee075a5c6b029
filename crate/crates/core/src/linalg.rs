//! Dense linear-algebra helpers: guarded LU solves, SVD pseudoinverse with
//! a relative singular-value cutoff, and PSD utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome of solving A·X = B for X, with rank and conditioning info.
#[derive(Debug, Clone)]
pub struct LinearSolve {
    /// The solution (minimum-norm least squares when A is rank-deficient).
    pub x: DMatrix<f64>,
    /// Numerical rank of A at the cutoff used.
    pub rank: usize,
    /// Largest singular value of A.
    pub sigma_max: f64,
    /// Smallest singular value above the cutoff (equals `sigma_max` for a
    /// zero-rank matrix, so ratios stay finite).
    pub sigma_min_nonzero: f64,
    /// Whether the SVD pseudoinverse path was taken.
    pub used_pseudoinverse: bool,
}

/// Relative singular-value cutoff: ε·max(n, m)·σ_max.
pub fn default_rcond(nrows: usize, ncols: usize) -> f64 {
    f64::EPSILON * nrows.max(ncols) as f64
}

/// Solve A·X = B. Square full-rank systems go through LU with partial
/// pivoting; anything else falls back to the SVD pseudoinverse, which
/// returns the least-squares solution of minimum Frobenius norm.
pub fn solve_linear_system(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LinearSolve> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            what: "right-hand side rows",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    if a.is_square() {
        if let Some(x) = lu_solve_checked(a, b) {
            // full rank certified by the residual check; still report the
            // spectral interval for the conditioning diagnostic
            let (sigma_max, sigma_min, rank) = spectral_summary(a);
            return Ok(LinearSolve {
                x,
                rank,
                sigma_max,
                sigma_min_nonzero: sigma_min,
                used_pseudoinverse: false,
            });
        }
    }
    pinv_solve(a, b)
}

/// LU solve with an a-posteriori residual check; `None` when the factors
/// are unusable or the residual exceeds a forward-stable bound.
pub fn lu_solve_checked(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let residual = (a * &x - b).norm();
    let scale = a.norm() * x.norm() + b.norm();
    if residual <= 1e-8 * scale.max(1.0) {
        Some(x)
    } else {
        None
    }
}

/// Minimum-norm least-squares solve via full SVD with cutoff
/// rcond = ε·max(n,m)·σ_max.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LinearSolve> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma_max = svd.singular_values.max();
    let cutoff = default_rcond(a.nrows(), a.ncols()) * sigma_max;

    let mut rank = 0;
    let mut sigma_min_nonzero = sigma_max;
    let mut inv_sigma = svd.singular_values.clone();
    for s in inv_sigma.iter_mut() {
        if *s > cutoff && *s > 0.0 {
            rank += 1;
            sigma_min_nonzero = sigma_min_nonzero.min(*s);
            *s = 1.0 / *s;
        } else {
            *s = 0.0;
        }
    }
    // X = V Σ⁺ Uᵀ B
    let mut ut_b = u.transpose() * b;
    for (i, s) in inv_sigma.iter().enumerate() {
        ut_b.row_mut(i).scale_mut(*s);
    }
    let x = v_t.transpose() * ut_b;
    Ok(LinearSolve {
        x,
        rank,
        sigma_max,
        sigma_min_nonzero,
        used_pseudoinverse: true,
    })
}

fn spectral_summary(a: &DMatrix<f64>) -> (f64, f64, usize) {
    let sv = a.clone().singular_values();
    let sigma_max = sv.max();
    let cutoff = default_rcond(a.nrows(), a.ncols()) * sigma_max;
    let mut rank = 0;
    let mut sigma_min = sigma_max;
    for &s in sv.iter() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            sigma_min = sigma_min.min(s);
        }
    }
    (sigma_max, sigma_min, rank)
}

/// Largest absolute asymmetry |A_ij − A_ji|.
pub fn symmetry_error(a: &DMatrix<f64>) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            err = err.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    err
}

/// (A + Aᵀ)/2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().symmetric_eigen().eigenvalues.min()
}

/// A PSD factor A = W·Wᵀ via symmetric eigendecomposition, clamping
/// roundoff-negative eigenvalues to zero. Errors when some eigenvalue is
/// below −tol_scale.
pub fn psd_factor(a: &DMatrix<f64>, tol_scale: f64) -> Result<DMatrix<f64>> {
    let eig = a.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -tol_scale {
        return Err(Error::NotPsd {
            detail: format!("eigenvalue below tolerance -{tol_scale:.3e}"),
            min_eigenvalue: min,
        });
    }
    let mut w = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        w.column_mut(j).scale_mut(s);
    }
    Ok(w)
}

/// Condition number estimate σ_max/σ_min over the nonzero spectrum.
pub fn nonzero_condition(sigma_max: f64, sigma_min_nonzero: f64) -> f64 {
    if sigma_max == 0.0 {
        1.0
    } else {
        sigma_max / sigma_min_nonzero
    }
}

/// Frobenius norm of A·X − B.
pub fn residual_norm(a: &DMatrix<f64>, x: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * x - b).norm()
}

/// Euclidean norm of each column.
pub fn column_norms(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn lu_path_on_well_conditioned_system() {
        let a = dmatrix![2.0, 1.0; 1.0, 2.0];
        let b = DMatrix::identity(2, 2);
        let s = solve_linear_system(&a, &b).unwrap();
        assert!(!s.used_pseudoinverse);
        assert_eq!(s.rank, 2);
        let expected = dmatrix![2.0/3.0, -1.0/3.0; -1.0/3.0, 2.0/3.0];
        assert!((s.x - expected).norm() < 1e-14);
        // singular values of [[2,1],[1,2]] are 3 and 1
        assert!((s.sigma_max - 3.0).abs() < 1e-12);
        assert!((s.sigma_min_nonzero - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_takes_min_norm_path() {
        // rank-1 matrix; rhs in its range
        let a = dmatrix![1.0, 1.0; 1.0, 1.0];
        let b = dmatrix![2.0; 2.0];
        let s = solve_linear_system(&a, &b).unwrap();
        assert!(s.used_pseudoinverse);
        assert_eq!(s.rank, 1);
        // min-norm solution of x1 + x2 = 2 is (1, 1)
        assert!((s.x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s.x[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psd_factor_reproduces_matrix() {
        let a = dmatrix![4.0, 2.0; 2.0, 3.0];
        let w = psd_factor(&a, 1e-12).unwrap();
        assert!(((&w * w.transpose()) - &a).norm() < 1e-12);
        let not_psd = dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(psd_factor(&not_psd, 1e-12).is_err());
    }
}
