use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, solve_lower};
use crate::error::{bail, Result};
use crate::math;

/// Default shrinkage towards the diagonal.
pub const DEFAULT_SHRINKAGE: f64 = 0.1;
/// Variances below this are treated as degenerate and replaced by 1.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

/// Regularized covariance of flattened embeddings, kept as a Cholesky factor
/// (full mode) or a vector of standard deviations (diagonal mode).
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSummary {
    pub mode: CovarianceMode,
    pub lambda: f64,
    pub dim: usize,
    factor: Vec<f64>,
}

impl CovarianceSummary {
    /// `(1 - lambda) S + lambda diag(S)` from sample covariance `S`, falling
    /// back to `diag(S)` when there are fewer than `2 dim` samples.
    pub fn estimate(rows: &[&[f64]], dim: usize, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            bail!(Config, "shrinkage lambda must lie in [0, 1], got {lambda}");
        }
        if rows.iter().any(|r| r.len() != dim) {
            bail!(Shape, "all embeddings must have {dim} values");
        }
        let n = rows.len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let denom = n.saturating_sub(1).max(1) as f64;
        if n < 2 * dim {
            log::warn!("{n} entries for a {dim}-dimensional embedding: using diagonal covariance");
            let mut var = vec![0.0; dim];
            for r in rows {
                for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let factor = var
                .iter()
                .map(|s| {
                    let v = s / denom;
                    if n < 2 || v < VARIANCE_FLOOR {
                        1.0
                    } else {
                        math::sqrt(v)
                    }
                })
                .collect();
            return Ok(Self {
                mode: CovarianceMode::Diagonal,
                lambda,
                dim,
                factor,
            });
        }
        let mut cov = vec![0.0; dim * dim];
        let mut c = vec![0.0; dim];
        for r in rows {
            for ((ci, v), m) in c.iter_mut().zip(*r).zip(&mean) {
                *ci = v - m;
            }
            for i in 0..dim {
                let ci = c[i];
                let row = &mut cov[i * dim..i * dim + i + 1];
                for (x, cj) in row.iter_mut().zip(&c) {
                    *x += ci * cj;
                }
            }
        }
        for i in 0..dim {
            for j in 0..=i {
                let v = cov[i * dim + j] / denom;
                let v = if i == j {
                    if v < VARIANCE_FLOOR {
                        1.0
                    } else {
                        v
                    }
                } else {
                    (1.0 - lambda) * v
                };
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        Self::from_matrix(&cov, dim, lambda)
    }

    /// Factors an explicit symmetric positive-definite matrix.
    pub fn from_matrix(cov: &[f64], dim: usize, lambda: f64) -> Result<Self> {
        for i in 0..dim {
            for j in 0..i {
                if math::abs(cov[i * dim + j] - cov[j * dim + i]) > 1e-10 {
                    bail!(Numeric, "covariance is not symmetric at ({i}, {j})");
                }
            }
        }
        Ok(Self {
            mode: CovarianceMode::Full,
            lambda,
            dim,
            factor: cholesky(cov, dim)?,
        })
    }

    /// Diagonal covariance with the given variances.
    pub fn diagonal(variances: &[f64], lambda: f64) -> Result<Self> {
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            bail!(Numeric, "diagonal variances must be positive and finite");
        }
        Ok(Self {
            mode: CovarianceMode::Diagonal,
            lambda,
            dim: variances.len(),
            factor: variances.iter().map(|v| math::sqrt(*v)).collect(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mode: CovarianceMode::Diagonal,
            lambda: 0.0,
            dim,
            factor: vec![1.0; dim],
        }
    }

    /// `L^{-1} x`, so that `|whiten(q) - whiten(v)|` is the Mahalanobis distance.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        match self.mode {
            CovarianceMode::Full => solve_lower(&self.factor, self.dim, x),
            CovarianceMode::Diagonal => x.iter().zip(&self.factor).map(|(v, s)| v / s).collect(),
        }
    }

    /// Lower factor (full) or standard deviations (diagonal).
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }
}
