//! C-functions: bivariate functions that vanish exactly on the
//! complementary set { (a, b) : a ≥ 0, b ≥ 0, ab = 0 }.
//!
//! Two standard choices are provided:
//!
//! * min:                ψ(a, b) = min(a, b)
//! * Fischer-Burmeister: ψ(a, b) = √(a² + b²) − a − b
//!
//! Derivative conventions at the nonsmooth points are fixed so that the
//! linear-response assembly is deterministic:
//!
//! * ψ_min on the tie line a = b takes the b-branch, (ψ_a, ψ_b) = (0, 1).
//!   At a strongly complementary solution the active branch is the function
//!   side, and rows for weakly complementary indices are zeroed downstream,
//!   so the tie only affects non-solution probes.
//! * ψ_FB at the origin returns (−1, −1), the center of its generalized
//!   gradient disk. The origin pair only occurs for weakly complementary
//!   indices, whose rows are zeroed downstream as well.

use serde::{Deserialize, Serialize};

/// Which C-function to use when forming residual rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CFunction {
    /// ψ(a, b) = min(a, b)
    Min,
    /// ψ(a, b) = √(a² + b²) − a − b
    #[default]
    FischerBurmeister,
}

impl CFunction {
    /// Evaluate ψ(a, b).
    pub fn psi(self, a: f64, b: f64) -> f64 {
        match self {
            CFunction::Min => a.min(b),
            CFunction::FischerBurmeister => (a * a + b * b).sqrt() - a - b,
        }
    }

    /// Partial derivative ∂ψ/∂a.
    pub fn psi_a(self, a: f64, b: f64) -> f64 {
        self.grad(a, b).0
    }

    /// Partial derivative ∂ψ/∂b.
    pub fn psi_b(self, a: f64, b: f64) -> f64 {
        self.grad(a, b).1
    }

    /// Both partials at once.
    pub fn grad(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            CFunction::Min => {
                if a < b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            CFunction::FischerBurmeister => {
                let r = (a * a + b * b).sqrt();
                if r == 0.0 {
                    (-1.0, -1.0)
                } else {
                    (a / r - 1.0, b / r - 1.0)
                }
            }
        }
    }
}
