use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;
use crate::nn::Tensor;

/// Denominator floor for MAPE, in spaces.
pub const MAPE_EPS: f64 = 1.0;
/// Minutes per horizon step.
pub const STEP_MINUTES: u32 = 15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
}

/// MAE, RMSE and MAPE (percent, denominators floored at [`MAPE_EPS`]).
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        bail!(Shape, "prediction has {} values, truth has {}", pred.len(), truth.len());
    }
    if pred.is_empty() {
        bail!(Shape, "cannot score an empty prediction");
    }
    if truth.iter().any(|v| !v.is_finite()) {
        bail!(Data, "ground truth contains non-finite values");
    }
    let n = pred.len() as f64;
    let abs: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| math::abs(p - t)).collect();
    let sq: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).collect();
    let pct: Vec<f64> = abs.iter().zip(truth).map(|(e, t)| e / math::abs(*t).max(MAPE_EPS)).collect();
    Ok(Metrics {
        mae: math::pairwise_sum(&abs) / n,
        rmse: math::sqrt(math::pairwise_sum(&sq) / n),
        mape: 100.0 * math::pairwise_sum(&pct) / n,
    })
}

/// Per-step metrics over all (window, node) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub variant: String,
    pub dataset: String,
    pub steps: Vec<Metrics>,
}

impl HorizonReport {
    /// `pred` and `truth` are `samples x nodes x L_pred`.
    pub fn compute(variant: &str, dataset: &str, pred: &Tensor, truth: &Tensor) -> Result<Self> {
        if pred.shape() != truth.shape() || pred.shape().len() != 3 {
            bail!(Shape, "prediction {:?} and truth {:?} must share a 3-D shape", pred.shape(), truth.shape());
        }
        let l = pred.shape()[2];
        let mut steps = Vec::with_capacity(l);
        for h in 0..l {
            let p: Vec<f64> = pred.data().iter().skip(h).step_by(l).copied().collect();
            let t: Vec<f64> = truth.data().iter().skip(h).step_by(l).copied().collect();
            steps.push(compute_metrics(&p, &t)?);
        }
        Ok(Self {
            variant: String::from(variant),
            dataset: String::from(dataset),
            steps,
        })
    }

    /// Mean of the per-step MAE values.
    pub fn mean_mae(&self) -> f64 {
        self.steps.iter().map(|m| m.mae).sum::<f64>() / self.steps.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,dataset,step,minutes,mae,rmse,mape\n");
        for (h, m) in self.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.4}",
                self.variant,
                self.dataset,
                h + 1,
                (h as u32 + 1) * STEP_MINUTES,
                m.mae,
                m.rmse,
                m.mape
            );
        }
        s
    }
}

/// One Markdown table with a MAE/RMSE/MAPE column triplet per horizon step
/// and one row per report.
pub fn markdown_table(reports: &[HorizonReport]) -> String {
    let l = reports.iter().map(|r| r.steps.len()).max().unwrap_or(0);
    let mut s = String::from("| Variant |");
    let mut rule = String::from("|---|");
    for h in 1..=l {
        let m = h as u32 * STEP_MINUTES;
        let _ = write!(s, " {m} mins MAE | {m} mins RMSE | {m} mins MAPE |");
        rule.push_str("---:|---:|---:|");
    }
    s.push('\n');
    s.push_str(&rule);
    s.push('\n');
    for r in reports {
        let _ = write!(s, "| {} |", r.variant);
        for m in &r.steps {
            let _ = write!(s, " {:.2} | {:.2} | {:.2}% |", m.mae, m.rmse, m.mape);
        }
        s.push('\n');
    }
    s
}

/// CSV of several reports side by side, sharing one header.
pub fn reports_csv(reports: &[HorizonReport]) -> String {
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = r.to_csv();
        if i == 0 {
            out.push_str(&csv);
        } else {
            out.push_str(csv.split_once('\n').map(|x| x.1).unwrap_or(""));
        }
    }
    out
}

