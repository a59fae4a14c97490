use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub const DEFAULT_CLUSTERS: usize = 16;
pub const MAX_ITERATIONS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of every input row.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans(rows: &[&[f64]], k: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > rows.len() {
        bail!(Config, "k-means needs 1 <= k <= {} entries, got k={k}", rows.len());
    }
    let mut rng = crate::nn::seeded(seed);
    let mut centroids: Vec<Vec<f64>> = vec![rows[rng.random_range(0..rows.len())].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = rows.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..rows.len())
        };
        centroids.push(rows[pick].to_vec());
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, centroids.last().unwrap()));
        }
    }
    let dim = rows[0].len();
    let mut assignment = vec![usize::MAX; rows.len()];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        for (a, r) in assignment.iter_mut().zip(rows) {
            let n = nearest(&centroids, r);
            if *a != n {
                *a = n;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, r) in assignment.iter().zip(rows) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(*r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignment,
        iterations,
    })
}
