//! Covariance approximation and stochastic sensitivity analysis for
//! parametrized nonlinear complementarity problems.
//!
//! Given an NCP `K ∋ x ⊥ F(x; θ) ∈ K*` over a mixed nonnegative/free cone
//! with random parameters θ, this crate
//!
//! * solves the problem at the mean parameters (semismooth Newton on the
//!   Fischer-Burmeister merit, [`solver`]),
//! * classifies the solution's activity pattern and assembles the linear
//!   response T with Δx ≈ −T·Δθ ([`uq`]),
//! * propagates input covariances (C* = T C Tᵀ) and ranks parameters by
//!   total linear sensitivity,
//! * handles equality-constrained convex programs through their KKT system
//!   ([`optprog`]), where the quadratic case is exact,
//! * validates everything against stratified Monte-Carlo re-solves and
//!   measures the speedup ([`mc`]).
//!
//! Bundled [`models`] include an N-player Nash-Cournot oligopoly and a
//! multi-year natural-gas network equilibrium whose gradients are built
//! through a coordinate-format sparse N-dimensional array ([`sparse`]).
//!
//! The expensive step — solving Φ′T = 𝒩 — happens once per model;
//! each covariance scenario afterwards is two matrix multiplications.

pub mod cfunc;
pub mod cone;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod models;
pub mod optprog;
pub mod problem;
pub mod report;
pub mod solver;
pub mod sparse;
pub mod uq;

pub use cfunc::CFunction;
pub use cone::ConeSpec;
pub use error::{Error, Result};
pub use problem::{
    check_solution, classify_activity, merit_scalar, merit_vector, Activity, ParametrizedNcp,
    SolutionPoint,
};
pub use solver::{solve, solve_perturbed, SolverConfig, SolveReport};
pub use sparse::SparseNdArray;
pub use uq::{
    build_linear_response, condition_diagnostic, finite_difference_t, propagate_covariance,
    sensitivity, trace_uncertainty, wiener_covariance, CovarianceModel, LinearResponse,
    PropagationResult,
};
