//! N-player Nash-Cournot oligopoly with linear demand.
//!
//! Producers i = 1..k choose quantities Q_i ≥ 0 facing the inverse demand
//! P = a + b·ΣQ (b < 0) and unit costs γ_i. The equilibrium is the
//! complementarity problem
//!
//! ```text
//! 0 ≤ Q_i ⊥ F_i(Q) = γ_i − a − b·ΣQ − b·Q_i ≥ 0
//! ```
//!
//! with random parameters θ = (γ₁, …, γ_k, a, b).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::ConeSpec;
use crate::error::{Error, Result};
use crate::problem::ParametrizedNcp;

/// Oligopoly instance description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OligopolyConfig {
    /// Number of players k.
    pub players: usize,
    /// Demand intercept a > 0.
    pub intercept: f64,
    /// Demand slope b < 0.
    pub slope: f64,
    /// Unit production costs γ, length k.
    pub unit_costs: Vec<f64>,
}

impl OligopolyConfig {
    /// The benchmark family used for scaling experiments:
    /// a = 500, b = −0.5, γ_i = 100 + 3i.
    pub fn benchmark(players: usize) -> Self {
        Self {
            players,
            intercept: 500.0,
            slope: -0.5,
            unit_costs: (1..=players).map(|i| 100.0 + 3.0 * i as f64).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.players == 0 {
            return Err(Error::InvalidConfig("need at least one player".into()));
        }
        if self.unit_costs.len() != self.players {
            return Err(Error::DimensionMismatch {
                what: "unit costs",
                expected: self.players,
                got: self.unit_costs.len(),
            });
        }
        if self.slope >= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "demand slope must be negative, got {}",
                self.slope
            )));
        }
        if self.intercept <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "demand intercept must be positive, got {}",
                self.intercept
            )));
        }
        Ok(())
    }
}

/// Build the parametrized NCP with θ = (γ₁..γ_k, a, b) and exact Jacobians:
/// G_ij = −b − b·δ_ij, L = [I | −1 | −(ΣQ + Q_i)].
pub fn make_oligopoly(cfg: &OligopolyConfig) -> Result<ParametrizedNcp> {
    cfg.validate()?;
    let k = cfg.players;
    let m = k + 2;
    let mut theta = DVector::zeros(m);
    for i in 0..k {
        theta[i] = cfg.unit_costs[i];
    }
    theta[k] = cfg.intercept;
    theta[k + 1] = cfg.slope;

    let f = move |x: &DVector<f64>, t: &DVector<f64>| {
        let (a, b) = (t[k], t[k + 1]);
        let total: f64 = x.sum();
        DVector::from_fn(k, |i, _| t[i] - a - b * total - b * x[i])
    };
    let g = move |x: &DVector<f64>, t: &DVector<f64>| {
        let _ = x;
        let b = t[k + 1];
        DMatrix::from_fn(k, k, |i, j| if i == j { -2.0 * b } else { -b })
    };
    let l = move |x: &DVector<f64>, _t: &DVector<f64>| {
        let total: f64 = x.sum();
        DMatrix::from_fn(k, m, |i, j| {
            if j < k {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else if j == k {
                -1.0
            } else {
                -(total + x[i])
            }
        })
    };

    let var_labels = (1..=k).map(|i| format!("Q{i}")).collect();
    let mut param_labels: Vec<String> = (1..=k).map(|i| format!("gamma{i}")).collect();
    param_labels.push("a".into());
    param_labels.push("b".into());

    Ok(ParametrizedNcp::new(ConeSpec::nonneg(k), theta, f, g, l)
        .with_labels(var_labels, param_labels))
}

/// Active-set analytic equilibrium.
///
/// With active set A, the interior solution has total output
/// ΣQ = (Σ_A γ − |A|·a) / (b·(|A|+1)) and Q_i = (P − γ_i)/(−b) at the
/// price P = a + b·ΣQ. The equilibrium active set is a prefix of the
/// cost-sorted players: scanning prefix sizes downward, the valid one has
/// every member viable (γ < P) and every excluded player priced out
/// (γ ≥ P). Dropping players raises the price, so exactly one prefix is
/// consistent (up to ties, where the marginal player produces zero either
/// way).
pub fn cournot_closed_form(cfg: &OligopolyConfig) -> Vec<f64> {
    let k = cfg.players;
    let (a, b) = (cfg.intercept, cfg.slope);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| cfg.unit_costs[i].total_cmp(&cfg.unit_costs[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| cfg.unit_costs[i]).collect();
    let mut prefix_sum = 0.0;
    let mut prefix_sums = Vec::with_capacity(k);
    for &c in &sorted {
        prefix_sum += c;
        prefix_sums.push(prefix_sum);
    }
    for t in (1..=k).rev() {
        let total = (prefix_sums[t - 1] - t as f64 * a) / (b * (t as f64 + 1.0));
        let price = a + b * total;
        let members_viable = sorted[t - 1] < price;
        let excluded_out = t == k || sorted[t] >= price;
        if members_viable && excluded_out {
            let mut q = vec![0.0; k];
            for (rank, &i) in order.iter().enumerate().take(t) {
                q[i] = (price - sorted[rank]) / (-b);
            }
            return q;
        }
    }
    // demand intercept below every cost: nobody produces
    vec![0.0; k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{classify_activity, Activity};
    use crate::solver::{solve, SolverConfig};
    use nalgebra::dvector;

    #[test]
    fn duopoly_parameter_jacobian_at_solution() {
        let cfg = OligopolyConfig {
            players: 2,
            intercept: 15.0,
            slope: -1.0,
            unit_costs: vec![2.0, 1.0],
        };
        let p = make_oligopoly(&cfg).unwrap();
        let l = p.eval_l(&dvector![4.0, 5.0], p.theta_mean());
        let expected = nalgebra::dmatrix![
            1.0, 0.0, -1.0, -13.0;
            0.0, 1.0, -1.0, -14.0
        ];
        assert!((l - expected).amax() < 1e-14);
    }

    #[test]
    fn benchmark_family_values() {
        let cfg = OligopolyConfig::benchmark(20);
        assert_eq!(cfg.intercept, 500.0);
        assert_eq!(cfg.slope, -0.5);
        assert_eq!(cfg.unit_costs[0], 103.0);
        assert_eq!(cfg.unit_costs[19], 160.0);
    }

    #[test]
    fn closed_form_three_players() {
        let q = cournot_closed_form(&OligopolyConfig {
            players: 3,
            intercept: 500.0,
            slope: -0.5,
            unit_costs: vec![103.0, 106.0, 109.0],
        });
        assert_eq!(q, vec![203.0, 197.0, 191.0]);
    }

    #[test]
    fn closed_form_duopoly() {
        let q = cournot_closed_form(&OligopolyConfig {
            players: 2,
            intercept: 15.0,
            slope: -1.0,
            unit_costs: vec![2.0, 1.0],
        });
        assert!((q[0] - 4.0).abs() < 1e-12);
        assert!((q[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn monopoly_first_order_condition() {
        // single producer: Q = (γ − a)/(2b) when positive
        let cfg = OligopolyConfig {
            players: 1,
            intercept: 15.0,
            slope: -1.0,
            unit_costs: vec![2.0],
        };
        let expected = (2.0 - 15.0) / (2.0 * -1.0);
        let q = cournot_closed_form(&cfg);
        assert!((q[0] - expected).abs() < 1e-12);
        let p = make_oligopoly(&cfg).unwrap();
        let r = solve(&p, &p.theta_mean().clone(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn high_cost_players_priced_out_at_twenty() {
        let cfg = OligopolyConfig::benchmark(20);
        let q = cournot_closed_form(&cfg);
        // fifteen producers stay active, the rest are priced out
        assert_eq!(q.iter().filter(|&&v| v > 0.0).count(), 15);
        for &qi in &q[15..] {
            assert_eq!(qi, 0.0);
        }
        // solver agrees and classifies the inactive players as strong-F
        let p = make_oligopoly(&cfg).unwrap();
        let r = solve(&p, &p.theta_mean().clone(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        for i in 0..20 {
            assert!((r.x[i] - q[i]).abs() < 1e-7, "player {i}");
        }
        let sol = classify_activity(&p, &r.x, p.theta_mean(), None).unwrap();
        for i in 0..15 {
            assert_eq!(sol.activity[i], Activity::StrongX);
        }
        for i in 15..20 {
            assert_eq!(sol.activity[i], Activity::StrongF);
        }
    }

    #[test]
    fn closed_form_readmits_players_when_price_rises() {
        // all costs above the naive all-active price, but the two cheap
        // players sustain a higher price that keeps the third one out
        let cfg = OligopolyConfig {
            players: 3,
            intercept: 10.0,
            slope: -1.0,
            unit_costs: vec![2.0, 9.5, 9.9],
        };
        let q = cournot_closed_form(&cfg);
        // equilibrium price with only player 1 active: (10+2)/2 = 6 < 9.5
        assert!(q[0] > 0.0);
        assert_eq!(q[1], 0.0);
        assert_eq!(q[2], 0.0);
        let p = make_oligopoly(&cfg).unwrap();
        let r = solve(&p, &p.theta_mean().clone(), &SolverConfig::default()).unwrap();
        assert!(r.converged);
        for i in 0..3 {
            assert!((r.x[i] - q[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(make_oligopoly(&OligopolyConfig {
            players: 2,
            intercept: 15.0,
            slope: 0.5,
            unit_costs: vec![1.0, 2.0],
        })
        .is_err());
        assert!(make_oligopoly(&OligopolyConfig {
            players: 2,
            intercept: 15.0,
            slope: -1.0,
            unit_costs: vec![1.0],
        })
        .is_err());
    }
}
