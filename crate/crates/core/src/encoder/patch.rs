use alloc::vec;
use alloc::vec::Vec;

use crate::data::TimeSeriesBatch;
use crate::error::{bail, Result};
use crate::math;
use crate::nn::Tensor;

/// A `B x N x L' x w` grid: raw patches (`w = p`) or embedded patches
/// (`w = d`).
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub tensor: Tensor,
}

impl PatchGrid {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 4 {
            bail!(Shape, "patch grid must be 4-D, got {:?}", tensor.shape());
        }
        Ok(Self { tensor })
    }

    /// `(B, N, L', width)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.tensor.shape();
        (s[0], s[1], s[2], s[3])
    }

    /// The `L' x width` block of one (sample, node) instance.
    pub fn instance(&self, b: usize, n: usize) -> &[f64] {
        let (_, nn, lp, w) = self.dims();
        let size = lp * w;
        let i = b * nn + n;
        &self.tensor.data()[i * size..(i + 1) * size]
    }

    /// Folds nodes into the batch: `(B·N) x 1 x L' x width`.
    pub fn fold_nodes(&self) -> Tensor {
        let (b, n, lp, w) = self.dims();
        self.tensor.clone().reshape(&[b * n, 1, lp, w]).expect("same element count")
    }

    pub fn unfold_nodes(folded: Tensor, batch: usize, nodes: usize) -> Result<Self> {
        let s = folded.shape().to_vec();
        if s.len() != 4 || s[0] != batch * nodes || s[1] != 1 {
            bail!(Shape, "cannot unfold {:?} into {} x {} instances", s, batch, nodes);
        }
        Self::new(folded.reshape(&[batch, nodes, s[2], s[3]])?)
    }
}

/// Splits each series into `L / p` non-overlapping patches of width `p`.
pub fn patchify(batch: &TimeSeriesBatch, p: usize) -> Result<PatchGrid> {
    let (b, n, l) = batch.dims();
    if p == 0 || l % p != 0 {
        bail!(Shape, "series length L={} is not divisible by patch width p={}", l, p);
    }
    // Row-major B x N x L already is B x N x L' x p.
    PatchGrid::new(batch.values.clone().reshape(&[b, n, l / p, p])?)
}

/// Inverse of [`patchify`].
pub fn unpatchify(grid: &PatchGrid) -> Result<Tensor> {
    let (b, n, lp, p) = grid.dims();
    grid.tensor.clone().reshape(&[b, n, lp * p])
}

/// Per-instance normalization `(E - mu) / (sigma + eps)` with statistics
/// taken over the patch and embedding axes of each (sample, node).
pub fn instance_normalize(grid: &PatchGrid, eps: f64) -> PatchGrid {
    let (b, n, lp, d) = grid.dims();
    let mut out = Vec::with_capacity(grid.tensor.len());
    for bi in 0..b {
        for ni in 0..n {
            let (y, _) = instance_norm_rows(grid.instance(bi, ni), d, None, eps);
            out.extend(y);
        }
    }
    PatchGrid::new(Tensor::from_vec(&[b, n, lp, d], out).expect("shape preserved")).expect("4-D")
}

pub(crate) struct InstanceNormCache {
    centered: Vec<f64>,
    sigma: f64,
    rows: Vec<bool>,
    count: usize,
    eps: f64,
}

/// Instance norm over the selected rows of an `rows x d` block. Unselected
/// rows come out as zeros and receive no gradient.
pub(crate) fn instance_norm_rows(
    x: &[f64],
    d: usize,
    rows: Option<&[bool]>,
    eps: f64,
) -> (Vec<f64>, InstanceNormCache) {
    let nrows = x.len() / d;
    let sel: Vec<bool> = match rows {
        Some(r) => r.to_vec(),
        None => vec![true; nrows],
    };
    let count = sel.iter().filter(|s| **s).count() * d;
    let mut sum = 0.0;
    for r in 0..nrows {
        if sel[r] {
            sum += x[r * d..(r + 1) * d].iter().sum::<f64>();
        }
    }
    let mu = if count > 0 { sum / count as f64 } else { 0.0 };
    let mut centered = vec![0.0; x.len()];
    let mut ss = 0.0;
    for r in 0..nrows {
        if sel[r] {
            for i in r * d..(r + 1) * d {
                centered[i] = x[i] - mu;
                ss += centered[i] * centered[i];
            }
        }
    }
    let sigma = if count > 0 { math::sqrt(ss / count as f64) } else { 0.0 };
    let y = centered.iter().map(|c| c / (sigma + eps)).collect();
    (
        y,
        InstanceNormCache {
            centered,
            sigma,
            rows: sel,
            count,
            eps,
        },
    )
}

pub(crate) fn instance_norm_rows_backward(cache: &InstanceNormCache, dy: &[f64], d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    if cache.count == 0 {
        return dx;
    }
    let n = cache.count as f64;
    let s = cache.sigma + cache.eps;
    let mut mean_dy = 0.0;
    let mut dot = 0.0;
    for (r, &on) in cache.rows.iter().enumerate() {
        if on {
            for i in r * d..(r + 1) * d {
                mean_dy += dy[i];
                dot += dy[i] * cache.centered[i];
            }
        }
    }
    mean_dy /= n;
    let tail = if cache.sigma > 0.0 {
        dot / (n * cache.sigma * s * s)
    } else {
        0.0
    };
    for (r, &on) in cache.rows.iter().enumerate() {
        if on {
            for i in r * d..(r + 1) * d {
                dx[i] = (dy[i] - mean_dy) / s - cache.centered[i] * tail;
            }
        }
    }
    dx
}

/// Per-series z-scoring applied before patching; constant series map to zeros.
pub fn standardize(x: &[f64], eps: f64) -> Vec<f64> {
    let (m, s) = math::mean_std(x);
    x.iter().map(|v| (v - m) / (s + eps)).collect()
}
