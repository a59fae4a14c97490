use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Guard on both sides of the weight ratio.
pub const WEIGHT_EPS: f64 = 1e-9;

/// Zero-mean, unit-variance copy; constant slices map to zeros.
pub fn z_normalize(x: &[f64]) -> Vec<f64> {
    let (m, s) = math::mean_std(x);
    if s < 1e-12 {
        return alloc::vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / s).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Weights `min_j |x_j - x_t| / |s_i - x_t|` for every candidate, each
/// z-normalized first. The best candidate gets exactly 1.
pub fn similarity_weights(candidates: &[Vec<f64>], target: &[f64]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        bail!(Data, "similarity weight needs a non-empty candidate set");
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != target.len()) {
        bail!(Shape, "candidate slice has {} steps, target has {}", c.len(), target.len());
    }
    let t = z_normalize(target);
    let d: Vec<f64> = candidates.iter().map(|c| dist(&z_normalize(c), &t)).collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(d.iter()
        .map(|di| if *di == min { 1.0 } else { (min + WEIGHT_EPS) / (di + WEIGHT_EPS) })
        .collect())
}

/// Weight of candidate `index` within `candidates`.
pub fn similarity_weight(index: usize, candidates: &[Vec<f64>], target: &[f64]) -> Result<f64> {
    if index >= candidates.len() {
        bail!(Data, "candidate {index} out of range");
    }
    Ok(similarity_weights(candidates, target)?[index])
}

/// Grid of weights with carparks as columns and time windows as rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    /// Row-major `rows x columns`.
    pub values: Vec<f64>,
}

impl Heatmap {
    /// `slices[r][c]` is the source slice of carpark `c` in window `r`. All
    /// cells form one candidate set.
    pub fn compute(target: &[f64], columns: Vec<String>, rows: Vec<String>, slices: &[Vec<Vec<f64>>]) -> Result<Self> {
        if slices.len() != rows.len() || slices.iter().any(|r| r.len() != columns.len()) {
            bail!(Shape, "heatmap grid must be {} x {}", rows.len(), columns.len());
        }
        let flat: Vec<Vec<f64>> = slices.iter().flatten().cloned().collect();
        let values = similarity_weights(&flat, target)?;
        Ok(Self { columns, rows, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    /// Fraction of cells with weight above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        self.values.iter().filter(|w| **w > threshold).count() as f64 / self.values.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("window");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, name) in self.rows.iter().enumerate() {
            out.push_str(name);
            for c in 0..self.columns.len() {
                out.push_str(&format!(",{:.6}", self.get(r, c)));
            }
            out.push('\n');
        }
        out
    }
}
