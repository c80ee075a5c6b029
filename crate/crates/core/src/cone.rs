//! Cone specification for mixed complementarity structure.
//!
//! The feasible cone is a Cartesian product of half spaces and full spaces:
//! K = { x ∈ ℝⁿ : x_i ≥ 0 for i ∈ ℐ }, where indices outside ℐ are free.
//! Its dual is K* = { v : v_i ≥ 0 for i ∈ ℐ, v_i = 0 for i ∉ ℐ }, which is
//! what the solution function value must lie in.

use crate::error::{Error, Result};

/// Index structure of the cone K: which coordinates are sign-constrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeSpec {
    n: usize,
    nonneg: Vec<bool>,
}

impl ConeSpec {
    /// Every coordinate nonnegative (ℐ = {0..n-1}), the pure NCP cone.
    pub fn nonneg(n: usize) -> Self {
        Self {
            n,
            nonneg: vec![true; n],
        }
    }

    /// Every coordinate free (ℐ = ∅); the problem degenerates to F(x) = 0.
    pub fn free(n: usize) -> Self {
        Self {
            n,
            nonneg: vec![false; n],
        }
    }

    /// Mixed cone with the given set of nonnegative indices.
    pub fn mixed(n: usize, nonneg_indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut nonneg = vec![false; n];
        for i in nonneg_indices {
            if i >= n {
                return Err(Error::DimensionMismatch {
                    what: "cone index",
                    expected: n,
                    got: i,
                });
            }
            nonneg[i] = true;
        }
        Ok(Self { n, nonneg })
    }

    /// Dimension of the ambient space.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Whether index `i` is sign-constrained (i ∈ ℐ).
    pub fn is_nonneg(&self, i: usize) -> bool {
        self.nonneg[i]
    }

    /// Indices in ℐ, ascending.
    pub fn nonneg_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| self.nonneg[i])
    }

    /// Membership test x ∈ K within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.n
            && x.iter()
                .zip(&self.nonneg)
                .all(|(&xi, &c)| !c || xi >= -tol)
    }

    /// Dual-cone membership v ∈ K* within `tol`:
    /// v_i ≥ −tol on ℐ and |v_i| ≤ tol off ℐ.
    pub fn dual_contains(&self, v: &[f64], tol: f64) -> bool {
        v.len() == self.n
            && v.iter().zip(&self.nonneg).all(|(&vi, &c)| {
                if c {
                    vi >= -tol
                } else {
                    vi.abs() <= tol
                }
            })
    }
}
