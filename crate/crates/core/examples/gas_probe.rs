//! Scratch probe for tuning the bundled gas instance; prints the solved
//! state, activity margins, and response diagnostics.

use scpuq_core::models::gas::{initial_point, make_gas_market, toy_instance};
use scpuq_core::problem::{check_derivative_consistency, check_solution, classify_activity, Activity};
use scpuq_core::solver::{solve, SolverConfig};
use scpuq_core::uq::{
    build_linear_response, condition_diagnostic, finite_difference_t, propagate_covariance,
    sensitivity,
};
use scpuq_core::CFunction;

fn main() {
    let model = toy_instance();
    let p = make_gas_market(&model).expect("assembles");
    println!("n = {}, m = {}", p.dim(), p.param_dim());

    let theta = p.theta_mean().clone();
    let x0 = initial_point(&model).unwrap();
    let dc = check_derivative_consistency(&p, &x0, &theta, 1e-5);
    println!("derivative check at x0: G {:.2e}, L {:.2e}", dc.max_rel_g, dc.max_rel_l);

    let cfg = SolverConfig {
        x0: Some(x0),
        residual_tol: 1e-22,
        max_iter: 400,
        ..SolverConfig::default()
    };
    let r = solve(&p, &theta, &cfg).expect("no eval error");
    println!(
        "converged = {}, iters = {}, merit = {:.3e}",
        r.converged, r.iterations, r.merit
    );
    if !r.converged {
        let hist: Vec<String> = r
            .merit_history
            .iter()
            .step_by(10)
            .map(|m| format!("{m:.2e}"))
            .collect();
        println!("merit history (every 10): {hist:?}");
        let f = p.eval_f(&r.x, &theta);
        let mut rows: Vec<(f64, usize)> = (0..p.dim())
            .map(|i| {
                let phi = if p.cone().is_nonneg(i) {
                    let (a, b) = (r.x[i], f[i]);
                    (a * a + b * b).sqrt() - a - b
                } else {
                    f[i]
                };
                (phi.abs(), i)
            })
            .collect();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        println!("top residual rows:");
        for (v, i) in rows.iter().take(12) {
            println!(
                "  |phi| = {v:10.3e}  {}  x = {:10.3e}  F = {:10.3e}",
                p.var_labels()[*i],
                r.x[*i],
                f[*i]
            );
        }
        return;
    }
    let report = check_solution(&p, &r.x, &theta, 1e-8);
    println!(
        "check: primal {:.2e}, dual {:.2e}, compl {:.2e}, ok = {}",
        report.primal_violation, report.dual_violation, report.complementarity, report.ok
    );

    let sol = classify_activity(&p, &r.x, &theta, None).unwrap();
    let mut weak = 0;
    let mut min_margin = f64::INFINITY;
    let mut min_label = String::new();
    for i in 0..p.dim() {
        match sol.activity[i] {
            Activity::Weak => {
                weak += 1;
                println!("  WEAK: {}", p.var_labels()[i]);
            }
            Activity::StrongX => {
                if sol.x[i] < min_margin {
                    min_margin = sol.x[i];
                    min_label = format!("x {}", p.var_labels()[i]);
                }
            }
            Activity::StrongF => {
                if sol.f_value[i] < min_margin {
                    min_margin = sol.f_value[i];
                    min_label = format!("F {}", p.var_labels()[i]);
                }
            }
            Activity::Free => {}
        }
    }
    println!("weak = {weak}, smallest strong margin = {min_margin:.3e} at {min_label}");

    for (i, lbl) in p.var_labels().iter().enumerate() {
        if lbl.starts_with("X_") || lbl.starts_with("Q_prod") || lbl.starts_with("pi_cons")
            || lbl.starts_with("Cap_") || lbl.starts_with("Q_arc")
        {
            println!("  {lbl:26} = {:10.4}  F = {:10.3e}", sol.x[i], sol.f_value[i]);
        }
    }

    let lr = build_linear_response(&p, &sol, CFunction::Min).unwrap();
    println!(
        "rank = {}/{}, pinv = {}, kappa_H = {:.3e}",
        lr.rank(),
        p.dim(),
        lr.used_pseudoinverse(),
        condition_diagnostic(&lr)
    );

    let fd = finite_difference_t(&p, &sol, 1e-5, &cfg).unwrap();
    let mut worst = (0.0f64, 0usize);
    for d in 0..p.param_dim() {
        let tcol = lr.t().column(d);
        let diff = (fd.t.column(d) - tcol).norm();
        let rel = if tcol.norm() > 1e-8 {
            diff / tcol.norm()
        } else {
            diff
        };
        if rel > worst.0 {
            worst = (rel, d);
        }
        if !fd.column_ok[d] {
            println!("  FD column {d} failed");
        }
    }
    println!(
        "worst FD column rel error = {:.3e} at {} ({})",
        worst.0,
        worst.1,
        p.param_labels()[worst.1]
    );

    let cov = model.covariance(0.01, true).unwrap();
    let prop = propagate_covariance(&lr, &cov).unwrap();
    println!("trace C* = {:.4e}", prop.trace());
    let s = sensitivity(&lr);
    let mut order: Vec<usize> = (0..p.param_dim()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    println!("top sensitivities:");
    for &d in order.iter().take(8) {
        println!("  {:28} {:.4e}", p.param_labels()[d], s[d]);
    }
    println!("bottom sensitivities:");
    for &d in order.iter().rev().take(8) {
        println!("  {:28} {:.4e}", p.param_labels()[d], s[d]);
    }

    let family = |prefix: &str| -> (f64, f64) {
        let vals: Vec<f64> = p
            .param_labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.starts_with(prefix))
            .map(|(d, _)| s[d])
            .collect();
        (
            vals.iter().cloned().fold(f64::INFINITY, f64::min),
            vals.iter().cloned().fold(0.0, f64::max),
        )
    };
    for prefix in ["dem_intercept", "dem_slope", "cost_lin", "cost_quad", "arc_cost", "exp_price", "arc_exp_price"] {
        let (lo, hi) = family(prefix);
        println!("family {prefix:16} S in [{lo:.4e}, {hi:.4e}]");
    }
}
