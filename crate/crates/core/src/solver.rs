//! Desk-scale complementarity solver.
//!
//! Semismooth Newton on the Fischer-Burmeister residual with Armijo
//! backtracking and a Tikhonov (Levenberg-Marquardt style) fallback when the
//! Newton system is singular or fails to produce descent. The FB residual is
//! used because its squared norm is smooth at solution zeros, so Newton
//! converges quadratically near strongly complementary solutions; weakly
//! complementary ones are handled by the regularized fallback.
//!
//! Never returns a silent wrong answer: a report with `converged == false`
//! is the failure signal, and NaN in a function evaluation at the current
//! iterate is a hard error.

use nalgebra::{DMatrix, DVector};

use crate::cfunc::CFunction;
use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::ParametrizedNcp;

/// Solver options.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Maximum outer iterations.
    pub max_iter: usize,
    /// Convergence threshold on the merit ½‖Φ‖².
    pub residual_tol: f64,
    /// Armijo sufficient-decrease constant c₁ ∈ (0, 1).
    pub armijo_c1: f64,
    /// Base Tikhonov factor; the actual shift is this times ‖JᵀJ‖∞,
    /// escalating tenfold on failure.
    pub regularization: f64,
    /// Initial point; when absent, the projected least-squares zero of the
    /// linearization at the origin is used (all-ones on failure).
    pub x0: Option<DVector<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            residual_tol: 1e-20,
            armijo_c1: 1e-4,
            regularization: 1e-8,
            x0: None,
        }
    }
}

impl SolverConfig {
    /// Same options with a different convergence threshold.
    pub fn with_tol(mut self, residual_tol: f64) -> Self {
        self.residual_tol = residual_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidConfig("residual_tol must be > 0".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidConfig("armijo c1 must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final iterate.
    pub x: DVector<f64>,
    /// Outer iterations taken.
    pub iterations: usize,
    /// Final merit ½‖Φ(x)‖².
    pub merit: f64,
    /// Whether `merit ≤ residual_tol`.
    pub converged: bool,
    /// Merit value before each accepted step, then the final one;
    /// monotonically decreasing by construction.
    pub merit_history: Vec<f64>,
}

/// FB residual vector: F_i on free rows, ψ_FB(x_i, F_i) on cone rows.
fn fb_residual(problem: &ParametrizedNcp, x: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
    let psi = CFunction::FischerBurmeister;
    DVector::from_iterator(
        problem.dim(),
        (0..problem.dim()).map(|i| {
            if problem.cone().is_nonneg(i) {
                psi.psi(x[i], f[i])
            } else {
                f[i]
            }
        }),
    )
}

/// Generalized Jacobian of the FB residual: rows ψ_a·e_i + ψ_b·G_i on cone
/// rows, G_i on free rows.
fn fb_jacobian(
    problem: &ParametrizedNcp,
    x: &DVector<f64>,
    f: &DVector<f64>,
    theta: &DVector<f64>,
) -> DMatrix<f64> {
    let psi = CFunction::FischerBurmeister;
    let mut j = problem.eval_g(x, theta);
    for i in 0..problem.dim() {
        if problem.cone().is_nonneg(i) {
            let (da, db) = psi.grad(x[i], f[i]);
            for k in 0..problem.dim() {
                j[(i, k)] *= db;
            }
            j[(i, i)] += da;
        }
    }
    j
}

fn default_initial(problem: &ParametrizedNcp, theta: &DVector<f64>) -> DVector<f64> {
    let zero = DVector::zeros(problem.dim());
    let f0 = problem.eval_f(&zero, theta);
    let g0 = problem.eval_g(&zero, theta);
    let fallback = || DVector::from_element(problem.dim(), 1.0);
    if f0.iter().chain(g0.iter()).any(|v| !v.is_finite()) {
        return fallback();
    }
    let rhs = DMatrix::from_column_slice(problem.dim(), 1, (-&f0).as_slice());
    match linalg::solve_linear_system(&g0, &rhs) {
        Ok(s) if s.x.iter().all(|v| v.is_finite()) => {
            let mut x0 = DVector::from_column_slice(s.x.as_slice());
            for i in 0..problem.dim() {
                if problem.cone().is_nonneg(i) {
                    x0[i] = x0[i].max(0.0);
                }
            }
            x0
        }
        _ => fallback(),
    }
}

/// Solve the complementarity problem at parameters `theta`.
pub fn solve(
    problem: &ParametrizedNcp,
    theta: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    if theta.len() != problem.param_dim() {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected: problem.param_dim(),
            got: theta.len(),
        });
    }
    let mut x = match &cfg.x0 {
        Some(x0) => {
            if x0.len() != problem.dim() {
                return Err(Error::DimensionMismatch {
                    what: "x0",
                    expected: problem.dim(),
                    got: x0.len(),
                });
            }
            x0.clone()
        }
        None => default_initial(problem, theta),
    };

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut merit;

    loop {
        let f = problem.eval_f(&x, theta);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "non-finite function value at iteration {iterations}"
            )));
        }
        let phi = fb_residual(problem, &x, &f);
        merit = 0.5 * phi.norm_squared();
        history.push(merit);
        if merit <= cfg.residual_tol || iterations >= cfg.max_iter {
            break;
        }

        let j = fb_jacobian(problem, &x, &f, theta);
        let grad = j.transpose() * &phi;

        let step = descent_step(problem, theta, &x, &phi, merit, &j, &grad, cfg);
        match step {
            Some(next) => x = next,
            // line search exhausted in every candidate direction
            None => break,
        }
        iterations += 1;
    }

    Ok(SolveReport {
        converged: merit <= cfg.residual_tol,
        x,
        iterations,
        merit,
        merit_history: history,
    })
}

/// Re-solve at perturbed parameters starting from a known nearby solution.
pub fn solve_perturbed(
    problem: &ParametrizedNcp,
    theta: &DVector<f64>,
    warm_start: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let cfg = SolverConfig {
        x0: Some(warm_start.clone()),
        ..cfg.clone()
    };
    solve(problem, theta, &cfg)
}

/// Try the Newton direction, then increasingly regularized Gauss-Newton
/// directions, running an Armijo line search on each; first accepted step
/// wins.
#[allow(clippy::too_many_arguments)]
fn descent_step(
    problem: &ParametrizedNcp,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    phi: &DVector<f64>,
    merit: f64,
    j: &DMatrix<f64>,
    grad: &DVector<f64>,
    cfg: &SolverConfig,
) -> Option<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(x.len(), 1, (-phi).as_slice());
    if let Some(d) = linalg::lu_solve_checked(j, &rhs) {
        let d = DVector::from_column_slice(d.as_slice());
        if let Some(next) = armijo(problem, theta, x, merit, grad, &d, cfg) {
            return Some(next);
        }
    }
    // Tikhonov fallback on the Gauss-Newton normal equations,
    // (JᵀJ + λI) d = −∇f, escalating λ when the step is rejected.
    let h = j.transpose() * j;
    let scale = h
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut lambda = cfg.regularization * scale;
    let neg_grad = DMatrix::from_column_slice(x.len(), 1, (-grad).as_slice());
    for _ in 0..16 {
        let mut shifted = h.clone();
        for i in 0..x.len() {
            shifted[(i, i)] += lambda;
        }
        if let Some(d) = shifted
            .clone()
            .cholesky()
            .map(|c| c.solve(&neg_grad))
            .or_else(|| linalg::lu_solve_checked(&shifted, &neg_grad))
        {
            let d = DVector::from_column_slice(d.as_slice());
            if let Some(next) = armijo(problem, theta, x, merit, grad, &d, cfg) {
                return Some(next);
            }
        }
        lambda *= 10.0;
    }
    None
}

fn armijo(
    problem: &ParametrizedNcp,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    merit: f64,
    grad: &DVector<f64>,
    direction: &DVector<f64>,
    cfg: &SolverConfig,
) -> Option<DVector<f64>> {
    let slope = grad.dot(direction);
    if !(slope < 0.0) || direction.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut t = 1.0;
    while t >= 1e-14 {
        let trial = x + direction * t;
        let f = problem.eval_f(&trial, theta);
        if f.iter().all(|v| v.is_finite()) {
            let phi = fb_residual(problem, &trial, &f);
            let trial_merit = 0.5 * phi.norm_squared();
            if trial_merit <= merit + cfg.armijo_c1 * t * slope {
                return Some(trial);
            }
        }
        t *= 0.5;
    }
    None
}
