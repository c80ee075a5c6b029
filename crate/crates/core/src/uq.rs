//! First-order covariance propagation and stochastic sensitivity.
//!
//! Given a classified solution x* of the complementarity problem at the
//! mean parameters θ̄, the linear response matrix T solves
//!
//! ```text
//! Φ′ T = 𝒩,       Δx ≈ −T Δθ
//! ```
//!
//! where Φ′ and 𝒩 are assembled row-wise from the C-function derivatives
//! and the Jacobians G = ∇ₓF, L = ∇_θF:
//!
//! * free rows (i ∉ ℐ):   Φ′_i = G_i,                        𝒩_i = L_i
//! * weak rows (i ∈ 𝒵):   Φ′_i = 0,                          𝒩_i = 0
//! * otherwise:           Φ′_i = ψ_a·e_i + ψ_b·G_i,          𝒩_i = ψ_b·L_i
//!
//! with ψ_a, ψ_b evaluated at (x*_i, F_i). When Φ′ is singular (weak
//! complementarity makes this structural) the Moore-Penrose pseudoinverse
//! supplies the least-squares solution of minimum norm, which is the most
//! conservative first-order uncertainty estimate.
//!
//! The expensive step — solving for T — happens once; each covariance
//! scenario afterwards costs two matrix multiplications, C* = T C Tᵀ. The
//! total linear sensitivity of parameter d is the Euclidean norm of T's
//! column d; bumping the variance of input d by σ² raises the trace of C*
//! by S_d²·σ².

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cfunc::CFunction;
use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{check_solution, Activity, ParametrizedNcp, SolutionPoint};
use crate::solver::{solve_perturbed, SolverConfig};

/// κ_H above which the diagnostics flag the system as ill-conditioned.
pub const ILL_CONDITIONED_THRESHOLD: f64 = 1e8;

/// The assembled linear-response system and its solution T.
#[derive(Debug, Clone)]
pub struct LinearResponse {
    t: DMatrix<f64>,
    phi_prime: DMatrix<f64>,
    n_matrix: DMatrix<f64>,
    rank: usize,
    sigma_max: f64,
    sigma_min_nonzero: f64,
    used_pseudoinverse: bool,
    weak: Vec<usize>,
    var_labels: Vec<String>,
    param_labels: Vec<String>,
}

impl LinearResponse {
    /// Solve Φ′T = 𝒩 for a caller-assembled system.
    ///
    /// `weak` lists the rows that were zeroed (may be empty). Label vectors
    /// must match the system dimensions.
    pub fn from_system(
        phi_prime: DMatrix<f64>,
        n_matrix: DMatrix<f64>,
        weak: Vec<usize>,
        var_labels: Vec<String>,
        param_labels: Vec<String>,
    ) -> Result<Self> {
        if phi_prime.nrows() != n_matrix.nrows() {
            return Err(Error::DimensionMismatch {
                what: "response system rows",
                expected: phi_prime.nrows(),
                got: n_matrix.nrows(),
            });
        }
        let solve = if weak.is_empty() {
            linalg::solve_linear_system(&phi_prime, &n_matrix)?
        } else {
            // structurally rank-deficient: go straight to the pseudoinverse
            linalg::pinv_solve(&phi_prime, &n_matrix)?
        };
        Ok(Self {
            t: solve.x,
            phi_prime,
            n_matrix,
            rank: solve.rank,
            sigma_max: solve.sigma_max,
            sigma_min_nonzero: solve.sigma_min_nonzero,
            used_pseudoinverse: solve.used_pseudoinverse,
            weak,
            var_labels,
            param_labels,
        })
    }

    /// The response matrix T (n×m), with Δx ≈ −T·Δθ.
    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// The assembled Φ′ matrix.
    pub fn phi_prime(&self) -> &DMatrix<f64> {
        &self.phi_prime
    }

    /// The assembled 𝒩 matrix.
    pub fn n_matrix(&self) -> &DMatrix<f64> {
        &self.n_matrix
    }

    /// Numerical rank of Φ′.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Whether the minimum-norm pseudoinverse path was used.
    pub fn used_pseudoinverse(&self) -> bool {
        self.used_pseudoinverse
    }

    /// Rows zeroed as weakly complementary (the set 𝒵).
    pub fn weak_rows(&self) -> &[usize] {
        &self.weak
    }

    /// Variable labels (rows of T).
    pub fn var_labels(&self) -> &[String] {
        &self.var_labels
    }

    /// Parameter labels (columns of T).
    pub fn param_labels(&self) -> &[String] {
        &self.param_labels
    }
}

/// Build the linear response at a classified solution.
///
/// Preconditions: `sol` must pass [`check_solution`] at θ̄ (within a
/// tolerance scaled from its classification τ).
pub fn build_linear_response(
    problem: &ParametrizedNcp,
    sol: &SolutionPoint,
    psi: CFunction,
) -> Result<LinearResponse> {
    if sol.activity.len() != problem.dim() {
        return Err(Error::PreconditionFailed(
            "solution classification does not match problem dimension".into(),
        ));
    }
    let theta = problem.theta_mean().clone();
    let tol = sol.tau.max(1e-6 * sol.x.amax().max(1.0));
    let report = check_solution(problem, &sol.x, &theta, tol);
    if !report.ok {
        return Err(Error::PreconditionFailed(format!(
            "point does not solve the complementarity problem at tolerance {tol:.1e} \
             (primal {:.2e}, dual {:.2e}, complementarity {:.2e})",
            report.primal_violation, report.dual_violation, report.complementarity
        )));
    }

    let g = problem.eval_g(&sol.x, &theta);
    let l = problem.eval_l(&sol.x, &theta);
    let (n, m) = (problem.dim(), problem.param_dim());
    let mut phi_prime = DMatrix::zeros(n, n);
    let mut n_matrix = DMatrix::zeros(n, m);
    for i in 0..n {
        match sol.activity[i] {
            Activity::Free => {
                phi_prime.row_mut(i).copy_from(&g.row(i));
                n_matrix.row_mut(i).copy_from(&l.row(i));
            }
            Activity::Weak => {} // rows stay zero
            _ => {
                let (da, db) = psi.grad(sol.x[i], sol.f_value[i]);
                for k in 0..n {
                    phi_prime[(i, k)] = db * g[(i, k)];
                }
                phi_prime[(i, i)] += da;
                for k in 0..m {
                    n_matrix[(i, k)] = db * l[(i, k)];
                }
            }
        }
    }
    LinearResponse::from_system(
        phi_prime,
        n_matrix,
        sol.weak_set(),
        problem.var_labels().to_vec(),
        problem.param_labels().to_vec(),
    )
}

/// A validated symmetric positive semidefinite input covariance.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
}

impl CovarianceModel {
    /// Symmetry tolerance relative to the largest entry.
    const SYM_TOL: f64 = 1e-12;
    /// Eigenvalue floor relative to the trace.
    const EIG_TOL: f64 = 1e-10;

    /// Validate and wrap a covariance matrix.
    ///
    /// Requires symmetry to 1e-12 (relative to the largest entry) and all
    /// eigenvalues ≥ −1e-10·trace; fails with an eigenvalue report otherwise.
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidShape(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if labels.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                what: "covariance labels",
                expected: matrix.nrows(),
                got: labels.len(),
            });
        }
        let scale = matrix.amax().max(1.0);
        let sym_err = linalg::symmetry_error(&matrix);
        if sym_err > Self::SYM_TOL * scale {
            return Err(Error::NotPsd {
                detail: format!("asymmetric by {sym_err:.3e}"),
                min_eigenvalue: f64::NAN,
            });
        }
        let sym = linalg::symmetrize(&matrix);
        let min_eig = linalg::min_eigenvalue(&sym);
        let floor = -Self::EIG_TOL * sym.trace().abs().max(1.0);
        if min_eig < floor {
            return Err(Error::NotPsd {
                detail: format!("eigenvalue below {floor:.3e}"),
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self { matrix: sym, labels })
    }

    /// The m×m zero covariance (deterministic parameters).
    pub fn zero(labels: Vec<String>) -> Self {
        let m = labels.len();
        Self {
            matrix: DMatrix::zeros(m, m),
            labels,
        }
    }

    /// Diagonal covariance from per-parameter variances.
    pub fn from_variances(variances: &[f64], labels: Vec<String>) -> Result<Self> {
        if let Some(v) = variances.iter().find(|v| **v < 0.0) {
            return Err(Error::NotPsd {
                detail: "negative variance".into(),
                min_eigenvalue: *v,
            });
        }
        Ok(Self {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
            labels,
        })
    }

    /// Diagonal covariance where every parameter gets the same coefficient
    /// of variation: σ_j = cv·|θ̄_j|.
    pub fn diagonal_from_cv(theta_mean: &DVector<f64>, cv: f64, labels: Vec<String>) -> Result<Self> {
        if cv < 0.0 {
            return Err(Error::InvalidConfig("coefficient of variation must be ≥ 0".into()));
        }
        let variances: Vec<f64> = theta_mean.iter().map(|&t| (cv * t).powi(2)).collect();
        Self::from_variances(&variances, labels)
    }

    /// Block-diagonal assembly from labelled blocks.
    pub fn from_blocks(blocks: Vec<(Vec<String>, DMatrix<f64>)>) -> Result<Self> {
        let m: usize = blocks.iter().map(|(_, b)| b.nrows()).sum();
        let mut matrix = DMatrix::zeros(m, m);
        let mut labels = Vec::with_capacity(m);
        let mut offset = 0;
        for (block_labels, block) in blocks {
            if !block.is_square() || block.nrows() != block_labels.len() {
                return Err(Error::InvalidShape("covariance block shape mismatch".into()));
            }
            let k = block.nrows();
            matrix.view_mut((offset, offset), (k, k)).copy_from(&block);
            labels.extend(block_labels);
            offset += k;
        }
        Self::new(matrix, labels)
    }

    /// Scale the variances of the given indices by `factor`, keeping the
    /// matrix PSD: rows and columns are multiplied by √factor.
    pub fn scale_variances(&mut self, indices: &[usize], factor: f64) -> Result<()> {
        if factor < 0.0 {
            return Err(Error::InvalidConfig("variance scale must be ≥ 0".into()));
        }
        let s = factor.sqrt();
        for &i in indices {
            if i >= self.matrix.nrows() {
                return Err(Error::DimensionMismatch {
                    what: "variance scale index",
                    expected: self.matrix.nrows(),
                    got: i,
                });
            }
            self.matrix.row_mut(i).scale_mut(s);
            self.matrix.column_mut(i).scale_mut(s);
        }
        Ok(())
    }

    /// The covariance matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Parameter labels.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Dimension m.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Output of covariance propagation plus diagnostics.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    /// Output covariance C* = T C Tᵀ (exactly symmetrized).
    pub c_star: DMatrix<f64>,
    /// Total linear sensitivity per parameter (column norms of T).
    pub sensitivity: DVector<f64>,
    /// Condition number of Φ′ᵀΦ′ over the nonzero spectrum.
    pub kappa_h: f64,
    /// Numerical rank of Φ′.
    pub rank: usize,
    /// Whether the pseudoinverse path produced T.
    pub used_pseudoinverse: bool,
    /// Weakly complementary rows.
    pub weak: Vec<usize>,
}

impl PropagationResult {
    /// Sum of output variances.
    pub fn trace(&self) -> f64 {
        self.c_star.trace()
    }

    /// Whether κ_H exceeds [`ILL_CONDITIONED_THRESHOLD`].
    pub fn ill_conditioned(&self) -> bool {
        self.kappa_h > ILL_CONDITIONED_THRESHOLD
    }
}

/// Propagate an input covariance through the linear response:
/// C* = T C Tᵀ. T is reused across any number of covariance scenarios.
pub fn propagate_covariance(
    lr: &LinearResponse,
    c: &CovarianceModel,
) -> Result<PropagationResult> {
    if c.dim() != lr.t.ncols() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: lr.t.ncols(),
            got: c.dim(),
        });
    }
    let c_star = linalg::symmetrize(&(&lr.t * c.matrix() * lr.t.transpose()));
    Ok(PropagationResult {
        c_star,
        sensitivity: sensitivity(lr),
        kappa_h: condition_diagnostic(lr),
        rank: lr.rank,
        used_pseudoinverse: lr.used_pseudoinverse,
        weak: lr.weak.clone(),
    })
}

/// Total linear sensitivity: S_d = ‖T·e_d‖₂. A variance bump of σ² at
/// parameter d raises the total output variance by S_d²·σ².
pub fn sensitivity(lr: &LinearResponse) -> DVector<f64> {
    linalg::column_norms(&lr.t)
}

/// Sum of the diagonal of a (square, symmetric) covariance: the total
/// uncertainty, invariant under orthogonal changes of basis.
pub fn trace_uncertainty(c_star: &DMatrix<f64>) -> f64 {
    assert!(c_star.is_square(), "trace of a non-square matrix");
    c_star.trace()
}

/// Condition number κ_H of Φ′ᵀΦ′: the squared ratio of the largest to the
/// smallest nonzero singular value of Φ′. Values above 1e8 indicate the
/// first-order approximation is unreliable.
pub fn condition_diagnostic(lr: &LinearResponse) -> f64 {
    linalg::nonzero_condition(lr.sigma_max, lr.sigma_min_nonzero).powi(2)
}

/// Brownian (independent-increment) covariance block for a parameter
/// observed at the given times: σ = cv·mean(μ) and
/// Cov(θ(t_i), θ(t_j)) = σ²·min(t_i, t_j).
pub fn wiener_covariance(mu: &[f64], cv: f64, times: &[f64]) -> Result<DMatrix<f64>> {
    if mu.is_empty() || mu.len() != times.len() {
        return Err(Error::DimensionMismatch {
            what: "wiener horizon",
            expected: mu.len(),
            got: times.len(),
        });
    }
    if cv < 0.0 {
        return Err(Error::InvalidConfig("coefficient of variation must be ≥ 0".into()));
    }
    if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "times must be strictly increasing and positive".into(),
        ));
    }
    let sigma = cv * mu.iter().sum::<f64>() / mu.len() as f64;
    let var = sigma * sigma;
    let k = times.len();
    Ok(DMatrix::from_fn(k, k, |i, j| var * times[i].min(times[j])))
}

/// T estimated by one-sided differences of re-solves: column d is
/// −(x*(θ̄ + δ·e_d) − x*(θ̄))/δ, matching Δx = −T·Δθ.
#[derive(Debug, Clone)]
pub struct FiniteDifferenceT {
    /// The estimated response matrix.
    pub t: DMatrix<f64>,
    /// Per-column success flags; a failed perturbed solve leaves its column
    /// zero and the flag false.
    pub column_ok: Vec<bool>,
}

/// Estimate T by re-solving the problem at θ̄ + δ·e_d for every parameter,
/// warm-starting each solve from x*. Columns are computed independently
/// (in parallel) and merged in parameter order.
pub fn finite_difference_t(
    problem: &ParametrizedNcp,
    sol: &SolutionPoint,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<FiniteDifferenceT> {
    if delta <= 0.0 {
        return Err(Error::InvalidConfig("delta must be > 0".into()));
    }
    let theta = problem.theta_mean().clone();
    let columns: Vec<(DVector<f64>, bool)> = (0..problem.param_dim())
        .into_par_iter()
        .map(|d| {
            let mut theta_d = theta.clone();
            theta_d[d] += delta;
            match solve_perturbed(problem, &theta_d, &sol.x, cfg) {
                Ok(r) if r.converged => ((-(&r.x - &sol.x)) / delta, true),
                _ => (DVector::zeros(problem.dim()), false),
            }
        })
        .collect();
    let mut t = DMatrix::zeros(problem.dim(), problem.param_dim());
    let mut column_ok = Vec::with_capacity(columns.len());
    for (d, (col, ok)) in columns.into_iter().enumerate() {
        t.set_column(d, &col);
        column_ok.push(ok);
    }
    Ok(FiniteDifferenceT { t, column_ok })
}
