//! Covariance propagation for convex programs with linear equality
//! constraints, via the KKT linear response.
//!
//! For `minimize g(x) + c(θ)ᵀx subject to Ax = b(θ)` with g strictly
//! convex and A of full row rank, perturbing θ moves the primal-dual
//! optimum (x*, y*) by `Δ(x, y) = −T·Δθ` where
//!
//! ```text
//! T = [ ∇²g(x*)  Aᵀ ]⁻¹ [  ∇_θc ]
//!     [ A        0  ]   [ −∇_θb ]
//! ```
//!
//! so the joint primal-dual covariance is T C Tᵀ. The right-hand side is
//! oriented so that Δz = −T·Δθ, the same response convention as the
//! complementarity path (the covariance T C Tᵀ is indifferent to the
//! sign). Duals are first-class here: energy models read them as prices.
//! For the unconstrained quadratic g = ½xᵀGx with c(θ) = θ the response
//! T = G⁻¹ is exact, not first-order: the solution map x*(θ) = −G⁻¹θ is
//! linear.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::uq::{CovarianceModel, LinearResponse};

type VecOfX = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatOfX = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type VecOfTheta = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatOfTheta = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Equality-constrained convex program with parameter-dependent linear term
/// and right-hand side.
#[derive(Clone)]
pub struct EqConstrainedProgram {
    n: usize,
    p: usize,
    m: usize,
    grad_g: VecOfX,
    hess_g: MatOfX,
    c_of_theta: VecOfTheta,
    dc_dtheta: MatOfTheta,
    /// Constraint matrix A (p×n); p may be zero for unconstrained problems.
    a: DMatrix<f64>,
    b_of_theta: VecOfTheta,
    db_dtheta: MatOfTheta,
}

impl EqConstrainedProgram {
    /// Assemble a program. `a` may have zero rows (no constraints).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        grad_g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess_g: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        c_of_theta: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        dc_dtheta: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        a: DMatrix<f64>,
        b_of_theta: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        db_dtheta: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if a.nrows() > 0 && a.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "constraint matrix columns",
                expected: n,
                got: a.ncols(),
            });
        }
        Ok(Self {
            n,
            p: a.nrows(),
            m,
            grad_g: Arc::new(grad_g),
            hess_g: Arc::new(hess_g),
            c_of_theta: Arc::new(c_of_theta),
            dc_dtheta: Arc::new(dc_dtheta),
            a,
            b_of_theta: Arc::new(b_of_theta),
            db_dtheta: Arc::new(db_dtheta),
        })
    }

    /// An unconstrained quadratic ½xᵀGx + θᵀx (the exactly-propagated case).
    pub fn quadratic(g: DMatrix<f64>) -> Result<Self> {
        let n = g.nrows();
        if !g.is_square() {
            return Err(Error::InvalidShape("quadratic form must be square".into()));
        }
        let g1 = g.clone();
        let g2 = g;
        Self::new(
            n,
            n,
            move |x| &g1 * x,
            move |_| g2.clone(),
            |theta| theta.clone(),
            move |_| DMatrix::identity(n, n),
            DMatrix::zeros(0, n),
            |_| DVector::zeros(0),
            move |_| DMatrix::zeros(0, n),
        )
    }

    /// KKT residuals at a candidate primal-dual point.
    pub fn kkt_residual(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> f64 {
        let mut stationarity = (self.grad_g)(x) + (self.c_of_theta)(theta);
        if self.p > 0 {
            stationarity += self.a.transpose() * y;
        }
        let feasibility = if self.p > 0 {
            (&self.a * x - (self.b_of_theta)(theta)).amax()
        } else {
            0.0
        };
        stationarity.amax().max(feasibility)
    }
}

/// Build the KKT linear response at an optimal (x*, y*).
///
/// The response covers the stacked primal-dual vector (x, y); feed the
/// result to `propagate_covariance` for output covariances of both. Errors
/// when the KKT residual exceeds `tol` or when the saddle-point matrix is
/// singular (rank-deficient A violating the constraint qualification, or a
/// degenerate Hessian).
pub fn kkt_linear_response(
    prog: &EqConstrainedProgram,
    x_star: &DVector<f64>,
    y_star: &DVector<f64>,
    theta: &DVector<f64>,
    tol: f64,
) -> Result<LinearResponse> {
    if x_star.len() != prog.n || y_star.len() != prog.p || theta.len() != prog.m {
        return Err(Error::DimensionMismatch {
            what: "kkt point",
            expected: prog.n + prog.p,
            got: x_star.len() + y_star.len(),
        });
    }
    let resid = prog.kkt_residual(x_star, y_star, theta);
    if resid > tol {
        return Err(Error::PreconditionFailed(format!(
            "KKT residual {resid:.3e} exceeds tolerance {tol:.1e}"
        )));
    }

    let (n, p, m) = (prog.n, prog.p, prog.m);
    let h = (prog.hess_g)(x_star);
    let mut kkt = DMatrix::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    if p > 0 {
        kkt.view_mut((0, n), (n, p)).copy_from(&prog.a.transpose());
        kkt.view_mut((n, 0), (p, n)).copy_from(&prog.a);
    }

    // perturbing θ violates stationarity by ∇c·Δθ and feasibility by
    // −∇b·Δθ; restoring both gives M·Δz = [−∇c; ∇b]·Δθ, so with
    // T := M⁻¹[∇c; −∇b] the step is Δz = −T·Δθ
    let dc = (prog.dc_dtheta)(theta);
    let db = (prog.db_dtheta)(theta);
    let mut rhs = DMatrix::zeros(n + p, m);
    rhs.view_mut((0, 0), (n, m)).copy_from(&dc);
    if p > 0 {
        rhs.view_mut((n, 0), (p, m)).copy_from(&(-db));
    }

    // saddle-point system; dense LU with a rank check
    match linalg::lu_solve_checked(&kkt, &rhs) {
        Some(_) => {}
        None => {
            return Err(Error::RankDeficient(
                "KKT matrix is singular: A must have full row rank (constraint \
                 qualification) and the Hessian must be positive definite on the \
                 constraint null space"
                    .into(),
            ));
        }
    }
    let mut var_labels: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    var_labels.extend((0..p).map(|j| format!("y{j}")));
    let param_labels: Vec<String> = (0..m).map(|j| format!("theta{j}")).collect();
    LinearResponse::from_system(kkt, rhs, Vec::new(), var_labels, param_labels)
}

/// Report from the quadratic-program exactness check.
#[derive(Debug, Clone)]
pub struct QpExactnessReport {
    /// The propagated covariance T C Tᵀ from the KKT response.
    pub propagated: DMatrix<f64>,
    /// The closed-form covariance G⁻¹ C G⁻ᵀ.
    pub analytic: DMatrix<f64>,
    /// max |propagated − analytic| (should be machine precision).
    pub max_abs_dev_analytic: f64,
    /// Empirical covariance of sampled exact solutions x*(θ) = −G⁻¹θ.
    pub empirical: DMatrix<f64>,
    /// max over entries of |empirical − analytic| / SE(entry).
    pub max_se_ratio: f64,
    /// Sample count used for the empirical covariance.
    pub n_samples: usize,
}

/// Verify the zero-error property of the quadratic case: propagate through
/// the KKT response and compare against both the closed form G⁻¹ C G⁻ᵀ and
/// a Monte-Carlo estimate over the exact solution map x*(θ) = −G⁻¹·θ.
///
/// The empirical deviation shrinks as O(1/√N); `max_se_ratio` expresses it
/// in units of the per-entry standard error.
pub fn verify_qp_exactness(
    g: &DMatrix<f64>,
    c: &CovarianceModel,
    n_samples: usize,
    seed: u64,
) -> Result<QpExactnessReport> {
    let n = g.nrows();
    if !g.is_square() || c.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "quadratic exactness inputs",
            expected: n,
            got: c.dim(),
        });
    }
    let prog = EqConstrainedProgram::quadratic(g.clone())?;
    // at θ = 0 the optimum is x* = 0 with no duals
    let theta0 = DVector::zeros(n);
    let lr = kkt_linear_response(&prog, &DVector::zeros(n), &DVector::zeros(0), &theta0, 1e-10)?;
    let propagated = &(lr.t() * c.matrix() * lr.t().transpose());
    let propagated = linalg::symmetrize(propagated);

    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("quadratic form must be invertible".into()))?;
    let analytic = linalg::symmetrize(&(&g_inv * c.matrix() * g_inv.transpose()));
    let max_abs_dev_analytic = (&propagated - &analytic).amax();

    // Monte-Carlo over the exact solution map
    let factor = linalg::psd_factor(c.matrix(), 1e-10 * c.matrix().trace().abs().max(1.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut samples = DMatrix::zeros(n_samples, n);
    for s in 0..n_samples {
        let z = DVector::from_iterator(n, (0..n).map(|_| normal.sample(&mut rng)));
        let theta = &factor * z;
        let x = -&g_inv * theta;
        samples.row_mut(s).copy_from(&x.transpose());
    }
    let mean = samples.row_mean();
    let mut empirical = DMatrix::zeros(n, n);
    for s in 0..n_samples {
        let d = samples.row(s) - &mean;
        empirical += d.transpose() * &d;
    }
    empirical /= (n_samples - 1) as f64;

    let mut max_se_ratio: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let se = ((analytic[(i, i)] * analytic[(j, j)] + analytic[(i, j)].powi(2))
                / n_samples as f64)
                .sqrt();
            if se > 0.0 {
                max_se_ratio = max_se_ratio.max((empirical[(i, j)] - analytic[(i, j)]).abs() / se);
            }
        }
    }

    Ok(QpExactnessReport {
        propagated,
        analytic,
        max_abs_dev_analytic,
        empirical,
        max_se_ratio,
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uq::propagate_covariance;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn unconstrained_quadratic_response_is_g_inverse() {
        let g = dmatrix![2.0, 0.5; 0.5, 1.0];
        let prog = EqConstrainedProgram::quadratic(g.clone()).unwrap();
        let lr = kkt_linear_response(
            &prog,
            &dvector![0.0, 0.0],
            &DVector::zeros(0),
            &dvector![0.0, 0.0],
            1e-12,
        )
        .unwrap();
        // x*(θ) = −G⁻¹θ, so Δx = −T·Δθ with T = G⁻¹ (and the covariance
        // G⁻¹ C G⁻ᵀ is exact)
        let g_inv = g.try_inverse().unwrap();
        assert!((lr.t() - &g_inv).amax() < 1e-13);
    }

    #[test]
    fn equality_constrained_qp_matches_closed_form() {
        // g = ½xᵀx, c(θ) = (θ₁, 0), constraint x₁ + x₂ = θ₂:
        // x(θ) = ((θ₂ − θ₁)/2, (θ₁ + θ₂)/2), y(θ) = −(θ₁ + θ₂)/2,
        // so T = −∂(x,y)/∂θ.
        let a = dmatrix![1.0, 1.0];
        let prog = EqConstrainedProgram::new(
            2,
            2,
            |x| x.clone(),
            |_| DMatrix::identity(2, 2),
            |t| dvector![t[0], 0.0],
            |_| dmatrix![1.0, 0.0; 0.0, 0.0],
            a,
            |t| dvector![t[1]],
            |_| dmatrix![0.0, 1.0],
        )
        .unwrap();
        // optimum at θ = (1, 2): x = (0.5, 1.5), y = −1.5
        let theta = dvector![1.0, 2.0];
        let x = dvector![0.5, 1.5];
        let y = dvector![-1.5];
        assert!(prog.kkt_residual(&x, &y, &theta) < 1e-12);
        let lr = kkt_linear_response(&prog, &x, &y, &theta, 1e-10).unwrap();
        let expected = dmatrix![
            0.5, -0.5;
            -0.5, -0.5;
            0.5, 0.5
        ];
        assert!((lr.t() - &expected).amax() < 1e-13);

        // brute-force oracle: re-solve at perturbed θ and compare steps
        let d_theta = dvector![1e-6, -2e-6];
        let tp = &theta + &d_theta;
        let x_new = dvector![(tp[1] - tp[0]) / 2.0, (tp[0] + tp[1]) / 2.0];
        let y_new = dvector![-(tp[0] + tp[1]) / 2.0];
        let step = dvector![
            x_new[0] - x[0],
            x_new[1] - x[1],
            y_new[0] - y[0]
        ];
        let predicted = -(lr.t() * &d_theta);
        assert!((step - predicted).amax() < 1e-12);

        // constraint consistency: A·T_x = −∇_θb
        let t_x = lr.t().rows(0, 2).into_owned();
        let a = dmatrix![1.0, 1.0];
        let db = dmatrix![0.0, 1.0];
        assert!((a * t_x + db).amax() < 1e-10);
    }

    #[test]
    fn zero_covariance_propagates_to_zero_for_primal_and_dual() {
        let g = dmatrix![1.0, 0.0; 0.0, 2.0];
        let prog = EqConstrainedProgram::quadratic(g).unwrap();
        let lr = kkt_linear_response(
            &prog,
            &dvector![0.0, 0.0],
            &DVector::zeros(0),
            &dvector![0.0, 0.0],
            1e-12,
        )
        .unwrap();
        let zero = CovarianceModel::zero(vec!["t0".into(), "t1".into()]);
        let prop = propagate_covariance(&lr, &zero).unwrap();
        assert_eq!(prop.c_star.amax(), 0.0);
    }

    #[test]
    fn rank_deficient_constraints_are_an_error() {
        // duplicated constraint row: A does not have full row rank
        let a = dmatrix![1.0, 1.0; 1.0, 1.0];
        let prog = EqConstrainedProgram::new(
            2,
            1,
            |x| x.clone(),
            |_| DMatrix::identity(2, 2),
            |_| dvector![0.0, 0.0],
            |_| dmatrix![0.0; 0.0],
            a,
            |_| dvector![0.0, 0.0],
            |_| dmatrix![0.0; 0.0],
        )
        .unwrap();
        let err = kkt_linear_response(
            &prog,
            &dvector![0.0, 0.0],
            &dvector![0.0, 0.0],
            &dvector![0.0],
            1e-6,
        );
        match err {
            Err(Error::RankDeficient(msg)) => assert!(msg.contains("full row rank")),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn kkt_residual_precondition_enforced() {
        let g = dmatrix![1.0, 0.0; 0.0, 1.0];
        let prog = EqConstrainedProgram::quadratic(g).unwrap();
        let err = kkt_linear_response(
            &prog,
            &dvector![1.0, 1.0], // not optimal for θ = 0
            &DVector::zeros(0),
            &dvector![0.0, 0.0],
            1e-10,
        );
        assert!(matches!(err, Err(Error::PreconditionFailed(_))));
    }

    #[test]
    fn diagonal_quadratic_scalars_decouple() {
        // C and G diagonal: C*_ii = C_ii / G_ii²
        let g = dmatrix![2.0, 0.0; 0.0, 4.0];
        let c =
            CovarianceModel::from_variances(&[0.5, 0.8], vec!["a".into(), "b".into()]).unwrap();
        let report = verify_qp_exactness(&g, &c, 200, 7).unwrap();
        assert!((report.analytic[(0, 0)] - 0.5 / 4.0).abs() < 1e-14);
        assert!((report.analytic[(1, 1)] - 0.8 / 16.0).abs() < 1e-14);
        assert!(report.max_abs_dev_analytic < 1e-14);
    }
}
