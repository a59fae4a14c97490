use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Lower Cholesky factor of a symmetric positive-definite `n x n` matrix,
/// row-major.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        bail!(Shape, "expected {}x{} matrix, got {} values", n, n, a.len());
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    bail!(
                        Numeric,
                        "covariance is not positive definite at pivot {i} ({s:e}); increase the shrinkage lambda"
                    );
                }
                l[i * n + i] = math::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let mut s = b[i];
        for (lk, yk) in row.iter().zip(&y) {
            s -= lk * yk;
        }
        y[i] = s / l[i * n + i];
    }
    y
}
