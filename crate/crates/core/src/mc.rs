//! Stratified Monte-Carlo estimation of the solution covariance, used to
//! validate the first-order propagation and to measure its speedup.
//!
//! Sampling uses a balanced two-strata design per dimension: standard
//! normal draws are antithetically paired (z, −z), so each dimension's
//! draws split evenly between the negative and positive half, with counts
//! differing by at most one for odd sample sizes. Samples are mapped
//! through a PSD factor of the input covariance onto θ̄.
//!
//! Every sample re-solves the complementarity problem warm-started from
//! the mean solution x*(θ̄). Sample solves are independent and dispatched
//! in parallel; aggregation is deterministic in sample order, so a fixed
//! seed reproduces the report bit for bit regardless of thread count.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::ParametrizedNcp;
use crate::solver::{solve, solve_perturbed, SolverConfig};
use crate::uq::{build_linear_response, propagate_covariance, CovarianceModel};

/// How the parameter space is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingScheme {
    /// Antithetically paired draws, balanced across the two half-spaces of
    /// every dimension.
    BalancedStratified,
    /// Independent draws.
    Plain,
}

/// Sampling plan: size, design, and seed.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub n_samples: usize,
    /// Strata per dimension; the balanced design uses two.
    pub strata_per_dim: usize,
    pub scheme: SamplingScheme,
    pub seed: u64,
}

impl SamplingPlan {
    /// Balanced-stratified plan with the given size and seed.
    pub fn stratified(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            strata_per_dim: 2,
            scheme: SamplingScheme::BalancedStratified,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::InvalidConfig("need at least 2 samples".into()));
        }
        if self.scheme == SamplingScheme::BalancedStratified && self.strata_per_dim != 2 {
            return Err(Error::InvalidConfig(
                "the balanced design uses two strata per dimension".into(),
            ));
        }
        Ok(())
    }
}

/// The sample-count rule used for the scaling experiments:
/// max(100, 0.1·2ⁿ) for an n-dimensional problem.
pub fn default_sample_count(dim: usize) -> usize {
    let exact = 0.1 * 2f64.powi(dim as i32);
    (exact.round() as usize).max(100)
}

/// Draw parameter samples with mean θ̄ and covariance C.
///
/// Returns an N×m matrix, one sample per row. Deterministic given the plan
/// seed.
pub fn sample_parameters(
    c: &CovarianceModel,
    theta_mean: &DVector<f64>,
    plan: &SamplingPlan,
) -> Result<DMatrix<f64>> {
    plan.validate()?;
    let m = theta_mean.len();
    if c.dim() != m {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: m,
            got: c.dim(),
        });
    }
    // Cholesky when definite, eigenvalue square root otherwise (covers the
    // semidefinite cases: zero variances, rank-deficient blocks).
    let factor = match c.matrix().clone().cholesky() {
        Some(chol) => chol.l(),
        None => linalg::psd_factor(c.matrix(), 1e-10 * c.matrix().trace().abs().max(1.0))?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let normal = StandardNormal;
    let n = plan.n_samples;
    let mut samples = DMatrix::zeros(n, m);
    let fill_row = |samples: &mut DMatrix<f64>, row: usize, z: &DVector<f64>| {
        let theta = theta_mean + &factor * z;
        samples.row_mut(row).copy_from(&theta.transpose());
    };
    match plan.scheme {
        SamplingScheme::Plain => {
            for s in 0..n {
                let z = DVector::from_iterator(m, (0..m).map(|_| normal.sample(&mut rng)));
                fill_row(&mut samples, s, &z);
            }
        }
        SamplingScheme::BalancedStratified => {
            let pairs = n / 2;
            for k in 0..pairs {
                let z = DVector::from_iterator(m, (0..m).map(|_| normal.sample(&mut rng)));
                fill_row(&mut samples, 2 * k, &z);
                fill_row(&mut samples, 2 * k + 1, &(-z));
            }
            if n % 2 == 1 {
                let z = DVector::from_iterator(m, (0..m).map(|_| normal.sample(&mut rng)));
                fill_row(&mut samples, n - 1, &z);
            }
        }
    }
    Ok(samples)
}

/// Monte-Carlo estimate of the solution mean and covariance.
#[derive(Debug, Clone)]
pub struct McReport {
    /// Empirical mean of the successful solution samples.
    pub mean: DVector<f64>,
    /// Empirical covariance, unbiased (N−1) estimator.
    pub cov: DMatrix<f64>,
    /// Trace of the empirical covariance.
    pub trace: f64,
    /// Wall-clock time of the sampling loop.
    pub wall: Duration,
    /// Number of attempted solves.
    pub solves: usize,
    /// Solves that failed to converge (excluded from the estimate).
    pub failures: usize,
    /// False when more than 5% of the solves failed.
    pub reliable: bool,
}

/// Solve the problem at every parameter sample and estimate the solution
/// covariance. Failed solves are excluded and counted rather than retried,
/// keeping the stratification balanced.
pub fn mc_covariance(
    problem: &ParametrizedNcp,
    theta_mean: &DVector<f64>,
    c: &CovarianceModel,
    plan: &SamplingPlan,
    cfg: &SolverConfig,
) -> Result<McReport> {
    let base = solve(problem, theta_mean, cfg)?;
    if !base.converged {
        return Err(Error::PreconditionFailed(
            "solver does not converge at the mean parameters".into(),
        ));
    }
    let samples = sample_parameters(c, theta_mean, plan)?;
    let start = Instant::now();
    let solutions: Vec<Option<DVector<f64>>> = (0..plan.n_samples)
        .into_par_iter()
        .map(|s| {
            let theta = samples.row(s).transpose();
            match solve_perturbed(problem, &theta, &base.x, cfg) {
                Ok(r) if r.converged => Some(r.x),
                _ => None,
            }
        })
        .collect();
    let wall = start.elapsed();

    let n = problem.dim();
    let successes: Vec<&DVector<f64>> = solutions.iter().flatten().collect();
    let failures = plan.n_samples - successes.len();
    if successes.len() < 2 {
        return Err(Error::PreconditionFailed(format!(
            "only {} of {} sample solves converged",
            successes.len(),
            plan.n_samples
        )));
    }
    let mut mean = DVector::zeros(n);
    for x in &successes {
        mean += *x;
    }
    mean /= successes.len() as f64;
    let mut cov = DMatrix::zeros(n, n);
    for x in &successes {
        let d = *x - &mean;
        cov += &d * d.transpose();
    }
    cov /= (successes.len() - 1) as f64;

    Ok(McReport {
        trace: cov.trace(),
        mean,
        cov,
        wall,
        solves: plan.n_samples,
        failures,
        reliable: failures as f64 <= 0.05 * plan.n_samples as f64,
    })
}

/// One row of the runtime-comparison table.
#[derive(Debug, Clone)]
pub struct RaceRow {
    /// Problem size (players / dimension).
    pub size: usize,
    /// Wall time of building the linear response and propagating once.
    pub approx_secs: f64,
    /// Trace of the propagated covariance.
    pub approx_trace: f64,
    /// Monte-Carlo sample count mandated for this size.
    pub mc_solves: usize,
    /// Monte-Carlo wall time: measured, or projected when over budget.
    pub mc_secs: f64,
    /// Monte-Carlo covariance trace; absent when the run was skipped.
    pub mc_trace: Option<f64>,
    /// True when `mc_secs` is a projection from a probe batch.
    pub extrapolated: bool,
}

/// Time the first-order propagation against full Monte-Carlo across model
/// sizes. Sizes whose projected Monte-Carlo time exceeds `budget` are not
/// run; their time is extrapolated from a small probe batch (solve count ×
/// mean solve time) and flagged.
pub fn race(
    generate: impl Fn(usize) -> Result<(ParametrizedNcp, CovarianceModel)>,
    sizes: &[usize],
    budget: Duration,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Vec<RaceRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let (problem, c) = generate(size)?;
        let theta = problem.theta_mean().clone();
        let base = solve(&problem, &theta, cfg)?;
        if !base.converged {
            return Err(Error::PreconditionFailed(format!(
                "mean-value solve failed for size {size}"
            )));
        }

        let t0 = Instant::now();
        let sol = crate::problem::classify_activity(&problem, &base.x, &theta, None)?;
        let lr = build_linear_response(&problem, &sol, crate::cfunc::CFunction::Min)?;
        let prop = propagate_covariance(&lr, &c)?;
        let approx_secs = t0.elapsed().as_secs_f64();

        let n_mc = default_sample_count(size);
        // probe a small batch to project the full cost
        let probe_n = 32.min(n_mc).max(2);
        let probe_plan = SamplingPlan::stratified(probe_n, seed ^ 0x9e37_79b9);
        let probe_samples = sample_parameters(&c, &theta, &probe_plan)?;
        let probe_start = Instant::now();
        for s in 0..probe_n {
            let th = probe_samples.row(s).transpose();
            let _ = solve_perturbed(&problem, &th, &base.x, cfg)?;
        }
        let per_solve = probe_start.elapsed().as_secs_f64() / probe_n as f64;
        let projected = per_solve * n_mc as f64;

        if projected > budget.as_secs_f64() {
            rows.push(RaceRow {
                size,
                approx_secs,
                approx_trace: prop.trace(),
                mc_solves: n_mc,
                mc_secs: projected,
                mc_trace: None,
                extrapolated: true,
            });
        } else {
            let plan = SamplingPlan::stratified(n_mc, seed);
            let report = mc_covariance(&problem, &theta, &c, &plan, cfg)?;
            rows.push(RaceRow {
                size,
                approx_secs,
                approx_trace: prop.trace(),
                mc_solves: n_mc,
                mc_secs: report.wall.as_secs_f64(),
                mc_trace: Some(report.trace),
                extrapolated: false,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::ConeSpec;
    use crate::models::oligopoly::{make_oligopoly, OligopolyConfig};
    use nalgebra::dvector;

    fn identity_map_problem(m: usize) -> ParametrizedNcp {
        // free cone, F = x − θ: the solution map is x*(θ) = θ
        ParametrizedNcp::new(
            ConeSpec::free(m),
            DVector::zeros(m),
            |x, t| x - t,
            move |_, _| DMatrix::identity(m, m),
            move |_, _| -DMatrix::identity(m, m),
        )
    }

    #[test]
    fn sample_rule() {
        assert_eq!(default_sample_count(5), 100);
        assert_eq!(default_sample_count(10), 102);
        assert_eq!(default_sample_count(15), 3277);
        assert_eq!(default_sample_count(20), 104858);
    }

    #[test]
    fn zero_covariance_samples_collapse_to_mean() {
        let c = CovarianceModel::zero(vec!["a".into(), "b".into()]);
        let theta = dvector![3.0, -1.0];
        let s = sample_parameters(&c, &theta, &SamplingPlan::stratified(10, 1)).unwrap();
        for r in 0..10 {
            assert_eq!(s[(r, 0)], 3.0);
            assert_eq!(s[(r, 1)], -1.0);
        }
    }

    #[test]
    fn strata_are_exactly_balanced_for_even_sizes() {
        let c = CovarianceModel::from_variances(
            &[1.0, 4.0, 0.25],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let theta = dvector![0.0, 0.0, 0.0];
        let n = 1000;
        let s = sample_parameters(&c, &theta, &SamplingPlan::stratified(n, 42)).unwrap();
        for d in 0..3 {
            let negatives = (0..n).filter(|&r| s[(r, d)] < 0.0).count();
            assert_eq!(negatives, n / 2, "dimension {d}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = CovarianceModel::from_variances(&[1.0, 2.0], vec!["a".into(), "b".into()])
            .unwrap();
        let theta = dvector![5.0, 6.0];
        let plan = SamplingPlan::stratified(64, 99);
        let a = sample_parameters(&c, &theta, &plan).unwrap();
        let b = sample_parameters(&c, &theta, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_covariance_approaches_input() {
        let vars = [0.04, 0.01, 2.25, 0.01];
        let labels: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
        let c = CovarianceModel::from_variances(&vars, labels).unwrap();
        let theta = dvector![2.0, 1.0, 15.0, -1.0];
        let n = 1000;
        let s = sample_parameters(&c, &theta, &SamplingPlan::stratified(n, 7)).unwrap();
        let mean = s.row_mean();
        let mut cov = DMatrix::zeros(4, 4);
        for r in 0..n {
            let d = s.row(r) - &mean;
            cov += d.transpose() * d;
        }
        cov /= (n - 1) as f64;
        let err = (&cov - c.matrix()).norm() / c.matrix().norm();
        // law-of-large-numbers tolerance 4/√N
        assert!(err < 4.0 / (n as f64).sqrt(), "relative Frobenius error {err}");
    }

    #[test]
    fn identity_map_recovers_input_covariance() {
        let m = 3;
        let p = identity_map_problem(m);
        let c = CovarianceModel::from_variances(
            &[1.0, 0.5, 2.0],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let plan = SamplingPlan::stratified(4000, 3);
        let report = mc_covariance(
            &p,
            &DVector::zeros(m),
            &c,
            &plan,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(report.failures, 0);
        assert!(report.reliable);
        let err = (&report.cov - c.matrix()).norm() / c.matrix().norm();
        // O(1/√N) with N = 4000
        assert!(err < 4.0 / (4000f64).sqrt() * 2.0, "error {err}");
    }

    #[test]
    fn duopoly_trace_matches_propagated_value() {
        let p = make_oligopoly(&OligopolyConfig {
            players: 2,
            intercept: 15.0,
            slope: -1.0,
            unit_costs: vec![2.0, 1.0],
        })
        .unwrap();
        let c = CovarianceModel::from_variances(
            &[0.04, 0.01, 2.25, 0.01],
            p.param_labels().to_vec(),
        )
        .unwrap();
        let plan = SamplingPlan::stratified(2000, 11);
        let report = mc_covariance(
            &p,
            &p.theta_mean().clone(),
            &c,
            &plan,
            &SolverConfig::default(),
        )
        .unwrap();
        // the propagated trace is 0.9378; three standard errors of the
        // 2000-sample estimator comfortably bracket it
        assert!(
            (report.trace - 0.9378).abs() < 0.09,
            "trace {}",
            report.trace
        );
        assert!(report.reliable);
    }

    #[test]
    fn failed_solves_are_excluded_and_flagged() {
        // F blows up to NaN for θ > 0.8, which roughly a third of samples hit
        let p = ParametrizedNcp::new(
            ConeSpec::free(1),
            dvector![0.0],
            |x, t| {
                if t[0] > 0.8 {
                    dvector![f64::NAN]
                } else {
                    dvector![x[0] - t[0]]
                }
            },
            |_, _| DMatrix::identity(1, 1),
            |_, _| -DMatrix::identity(1, 1),
        );
        let c = CovarianceModel::from_variances(&[1.0], vec!["t".into()]).unwrap();
        let plan = SamplingPlan::stratified(200, 5);
        let report =
            mc_covariance(&p, &dvector![0.0], &c, &plan, &SolverConfig::default()).unwrap();
        assert!(report.failures > 10);
        assert!(!report.reliable);
        assert_eq!(report.solves, 200);
    }

    #[test]
    fn race_extrapolates_over_budget_sizes() {
        let generate = |size: usize| {
            let cfg = OligopolyConfig::benchmark(size);
            let p = make_oligopoly(&cfg)?;
            let mut vars = vec![1.0; size];
            vars.extend([0.0, 0.0]); // demand parameters deterministic
            let c = CovarianceModel::from_variances(&vars, p.param_labels().to_vec())?;
            Ok((p, c))
        };
        let rows = race(
            generate,
            &[3, 24],
            Duration::from_millis(200),
            17,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(!rows[0].extrapolated);
        assert!(rows[0].mc_trace.is_some());
        // 0.1·2²⁴ solves cannot fit in the budget
        assert!(rows[1].extrapolated);
        assert!(rows[1].mc_trace.is_none());
        assert_eq!(rows[1].mc_solves, default_sample_count(24));
    }
}
