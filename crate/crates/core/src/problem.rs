//! Problem representation: the parametrized complementarity problem, its
//! residual structure, and activity classification of solutions.
//!
//! A parametrized NCP is the triple (F, ∇ₓF, ∇_θF) together with the cone
//! index set ℐ and the mean parameter vector θ̄: find x ∈ K with
//! F(x; θ) ∈ K* and xᵀF(x; θ) = 0.
//!
//! At a solution, each sign-constrained index is classified as
//!
//! * strong-x:  x_i > τ and F_i ≈ 0 (the variable is interior),
//! * strong-F:  F_i > τ and x_i ≈ 0 (the constraint is slack),
//! * weak:      |x_i| ≤ τ and |F_i| ≤ τ (both vanish; the set 𝒵).
//!
//! The weak set drives the rank structure of the linear response: rows
//! indexed by 𝒵 are zeroed, which is what makes the pseudoinverse path
//! necessary.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cfunc::CFunction;
use crate::cone::ConeSpec;
use crate::error::{Error, Result};

type VecFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// The parametrized nonlinear complementarity problem.
///
/// `eval_g` must return the n×n Jacobian G with G_ij = ∂F_i/∂x_j and
/// `eval_l` the n×m parameter Jacobian L with L_ij = ∂F_i/∂θ_j.
#[derive(Clone)]
pub struct ParametrizedNcp {
    n: usize,
    m: usize,
    cone: ConeSpec,
    theta_mean: DVector<f64>,
    f: VecFn,
    g: MatFn,
    l: MatFn,
    var_labels: Vec<String>,
    param_labels: Vec<String>,
}

impl std::fmt::Debug for ParametrizedNcp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametrizedNcp")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl ParametrizedNcp {
    /// Assemble a problem from closures. Labels default to `x{i}`/`theta{j}`.
    pub fn new(
        cone: ConeSpec,
        theta_mean: DVector<f64>,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        g: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        l: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        let n = cone.dim();
        let m = theta_mean.len();
        Self {
            n,
            m,
            cone,
            theta_mean,
            f: Arc::new(f),
            g: Arc::new(g),
            l: Arc::new(l),
            var_labels: (0..n).map(|i| format!("x{i}")).collect(),
            param_labels: (0..m).map(|j| format!("theta{j}")).collect(),
        }
    }

    /// Replace the default variable/parameter labels.
    pub fn with_labels(mut self, var_labels: Vec<String>, param_labels: Vec<String>) -> Self {
        assert_eq!(var_labels.len(), self.n);
        assert_eq!(param_labels.len(), self.m);
        self.var_labels = var_labels;
        self.param_labels = param_labels;
        self
    }

    /// Solution dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Parameter dimension m.
    pub fn param_dim(&self) -> usize {
        self.m
    }

    /// The cone index structure.
    pub fn cone(&self) -> &ConeSpec {
        &self.cone
    }

    /// Mean parameter vector θ̄.
    pub fn theta_mean(&self) -> &DVector<f64> {
        &self.theta_mean
    }

    /// Variable labels (length n).
    pub fn var_labels(&self) -> &[String] {
        &self.var_labels
    }

    /// Parameter labels (length m).
    pub fn param_labels(&self) -> &[String] {
        &self.param_labels
    }

    /// Evaluate F(x; θ).
    pub fn eval_f(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        self.check_dims(x, theta);
        (self.f)(x, theta)
    }

    /// Evaluate the Jacobian G(x; θ) = ∇ₓF.
    pub fn eval_g(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        self.check_dims(x, theta);
        (self.g)(x, theta)
    }

    /// Evaluate the parameter Jacobian L(x; θ) = ∇_θF.
    pub fn eval_l(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        self.check_dims(x, theta);
        (self.l)(x, theta)
    }

    fn check_dims(&self, x: &DVector<f64>, theta: &DVector<f64>) {
        assert_eq!(x.len(), self.n, "x has wrong dimension");
        assert_eq!(theta.len(), self.m, "theta has wrong dimension");
    }
}

/// Per-index activity label at a classified solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    /// i ∉ ℐ: equation row, no sign constraint.
    Free,
    /// x_i > τ, F_i ≈ 0.
    StrongX,
    /// F_i > τ, x_i ≈ 0.
    StrongF,
    /// |x_i| ≤ τ and |F_i| ≤ τ: member of 𝒵.
    Weak,
}

/// A solution together with its residuals and activity classification.
#[derive(Debug, Clone)]
pub struct SolutionPoint {
    /// The solution vector x*.
    pub x: DVector<f64>,
    /// F(x*; θ̄).
    pub f_value: DVector<f64>,
    /// Per-index activity labels.
    pub activity: Vec<Activity>,
    /// Classification tolerance actually used.
    pub tau: f64,
}

impl SolutionPoint {
    /// Indices in the weak set 𝒵.
    pub fn weak_set(&self) -> Vec<usize> {
        self.activity
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Activity::Weak)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Default classification tolerance: 1e-6 scaled by max(1, ‖x‖∞).
pub fn default_tau(x: &DVector<f64>) -> f64 {
    1e-6 * x.amax().max(1.0)
}

/// Classify the activity of every index of `x_star` at parameters `theta`.
///
/// `tau` defaults to [`default_tau`]. Errors when some sign-constrained
/// coordinate is infeasible beyond τ.
pub fn classify_activity(
    problem: &ParametrizedNcp,
    x_star: &DVector<f64>,
    theta: &DVector<f64>,
    tau: Option<f64>,
) -> Result<SolutionPoint> {
    let tau = tau.unwrap_or_else(|| default_tau(x_star));
    let f_value = problem.eval_f(x_star, theta);
    let mut activity = Vec::with_capacity(problem.dim());
    for i in 0..problem.dim() {
        if !problem.cone().is_nonneg(i) {
            activity.push(Activity::Free);
            continue;
        }
        let (xi, fi) = (x_star[i], f_value[i]);
        if xi < -tau {
            return Err(Error::Infeasible(format!(
                "x[{i}] = {xi:.6e} < -tau = {:.1e}",
                -tau
            )));
        }
        if xi.abs() <= tau && fi.abs() <= tau {
            activity.push(Activity::Weak);
        } else if xi > tau && fi <= tau {
            activity.push(Activity::StrongX);
        } else {
            activity.push(Activity::StrongF);
        }
    }
    Ok(SolutionPoint {
        x: x_star.clone(),
        f_value,
        activity,
        tau,
    })
}

/// Residual report from [`check_solution`].
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Largest violation of x ∈ K (0 when feasible).
    pub primal_violation: f64,
    /// Largest violation of F ∈ K* (0 when feasible).
    pub dual_violation: f64,
    /// Inner product xᵀF.
    pub complementarity: f64,
    /// Tolerance the report was evaluated at.
    pub tol: f64,
    /// Whether all three residuals pass at `tol`.
    pub ok: bool,
}

/// Verify x ∈ K, F(x; θ) ∈ K*, and xᵀF ≤ tol; reports, never errors.
pub fn check_solution(
    problem: &ParametrizedNcp,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    tol: f64,
) -> ResidualReport {
    let f = problem.eval_f(x, theta);
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for i in 0..problem.dim() {
        if problem.cone().is_nonneg(i) {
            primal = primal.max(-x[i]);
            dual = dual.max(-f[i]);
        } else {
            dual = dual.max(f[i].abs());
        }
    }
    let complementarity = x.dot(&f);
    let ok = primal <= tol && dual <= tol && complementarity.abs() <= tol;
    ResidualReport {
        primal_violation: primal.max(0.0),
        dual_violation: dual.max(0.0),
        complementarity,
        tol,
        ok,
    }
}

/// The merit residual vector Φ(x; θ) with the weak set frozen from `sol`:
/// component i is F_i for free rows, ψ²(x_i, F_i) for i ∈ 𝒵, and
/// ψ(x_i, F_i) otherwise.
///
/// 𝒵 is the classification computed at θ̄ and is deliberately not
/// re-derived at (x, θ); re-evaluations far from the classified solution
/// keep the original row structure.
pub fn merit_vector(
    problem: &ParametrizedNcp,
    sol: &SolutionPoint,
    psi: CFunction,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    if sol.activity.len() != problem.dim() || x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            what: "merit vector input",
            expected: problem.dim(),
            got: x.len(),
        });
    }
    let f = problem.eval_f(x, theta);
    let mut phi = DVector::zeros(problem.dim());
    for i in 0..problem.dim() {
        phi[i] = match sol.activity[i] {
            Activity::Free => f[i],
            Activity::Weak => psi.psi(x[i], f[i]).powi(2),
            _ => psi.psi(x[i], f[i]),
        };
    }
    Ok(phi)
}

/// Scalar merit f(x; θ) = ½‖Φ‖₂²; zero exactly at solutions of the NCP.
pub fn merit_scalar(
    problem: &ParametrizedNcp,
    sol: &SolutionPoint,
    psi: CFunction,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<f64> {
    let phi = merit_vector(problem, sol, psi, x, theta)?;
    Ok(0.5 * phi.norm_squared())
}

/// Largest relative disagreement between the analytic Jacobians and central
/// finite differences of F at (x, θ).
#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheck {
    /// max over entries of |G_ij − fd| / max(1, |G_ij|)
    pub max_rel_g: f64,
    /// same for L
    pub max_rel_l: f64,
}

/// Compare `eval_g` / `eval_l` against O(h²) central differences of `eval_f`.
pub fn check_derivative_consistency(
    problem: &ParametrizedNcp,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    h: f64,
) -> DerivativeCheck {
    let g = problem.eval_g(x, theta);
    let l = problem.eval_l(x, theta);
    let mut max_rel_g: f64 = 0.0;
    for j in 0..problem.dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (problem.eval_f(&xp, theta) - problem.eval_f(&xm, theta)) / (2.0 * h);
        for i in 0..problem.dim() {
            let rel = (g[(i, j)] - fd[i]).abs() / g[(i, j)].abs().max(1.0);
            max_rel_g = max_rel_g.max(rel);
        }
    }
    let mut max_rel_l: f64 = 0.0;
    for j in 0..problem.param_dim() {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += h;
        tm[j] -= h;
        let fd = (problem.eval_f(x, &tp) - problem.eval_f(x, &tm)) / (2.0 * h);
        for i in 0..problem.dim() {
            let rel = (l[(i, j)] - fd[i]).abs() / l[(i, j)].abs().max(1.0);
            max_rel_l = max_rel_l.max(rel);
        }
    }
    DerivativeCheck { max_rel_g, max_rel_l }
}
