//! Base forecasters and the prediction tokens they hand to the reasoning
//! stage.
//!
//! A token is the full `L_pred`-step forecast for one (window, node) pair.
//! Windows slide with stride 1 through a split; history for a window is every
//! observed step from the split's observation start up to the end of its
//! input range.

#[cfg(test)]
mod tests;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::CityDataset;
use crate::error::{bail, Result};
use crate::nn::Tensor;

/// Default seasonal period: one day of 15-minute steps.
pub const DEFAULT_PERIOD: usize = 96;
pub const DEFAULT_INPUT_LEN: usize = 12;
pub const DEFAULT_PRED_LEN: usize = 12;

/// Built-in forecaster choices plus a marker for externally produced tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterSpec {
    SeasonalNaive { period: usize },
    HistoricalAverage { period: usize },
    ExternalFile { path: String },
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        ForecasterSpec::SeasonalNaive { period: DEFAULT_PERIOD }
    }
}

/// A forecaster over one node's history.
pub trait BaseForecaster {
    /// Producer tag stored with the tokens.
    fn tag(&self) -> String;
    /// `history` ends at the last observed step before the horizon.
    fn forecast(&self, history: &[Option<f64>], pred_len: usize) -> Vec<f64>;
    /// Whether a history of `len` steps forces a degraded fallback.
    fn falls_back(&self, _len: usize) -> bool {
        false
    }
}

fn last_observed(history: &[Option<f64>]) -> f64 {
    history.iter().rev().find_map(|v| *v).unwrap_or(0.0)
}

/// `y[t + h] = y[t + h - k * period]` for the smallest usable `k >= 1`;
/// falls back to the last observed value when the history is too short.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeasonalNaive {
    pub period: usize,
}

impl BaseForecaster for SeasonalNaive {
    fn tag(&self) -> String {
        format!("seasonal_naive(period={})", self.period)
    }

    fn forecast(&self, history: &[Option<f64>], pred_len: usize) -> Vec<f64> {
        let t = history.len();
        if self.falls_back(t) {
            return alloc::vec![last_observed(history); pred_len];
        }
        let last = last_observed(history);
        (0..pred_len)
            .map(|h| {
                let k = h / self.period + 1;
                history[t + h - k * self.period].unwrap_or(last)
            })
            .collect()
    }

    fn falls_back(&self, len: usize) -> bool {
        len < self.period || self.period == 0
    }
}

/// Mean of all earlier observations at the same phase of `period`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoricalAverage {
    pub period: usize,
}

impl BaseForecaster for HistoricalAverage {
    fn tag(&self) -> String {
        format!("historical_average(period={})", self.period)
    }

    fn forecast(&self, history: &[Option<f64>], pred_len: usize) -> Vec<f64> {
        let t = history.len();
        let last = last_observed(history);
        (0..pred_len)
            .map(|h| {
                let mut sum = 0.0;
                let mut n = 0usize;
                let mut k = 1;
                while self.period > 0 && t + h >= k * self.period {
                    let i = t + h - k * self.period;
                    if i < t {
                        if let Some(v) = history[i] {
                            sum += v;
                            n += 1;
                        }
                    }
                    k += 1;
                }
                if n == 0 {
                    last
                } else {
                    sum / n as f64
                }
            })
            .collect()
    }
}

/// Instantiates a built-in forecaster.
pub fn builtin(spec: &ForecasterSpec) -> Result<alloc::boxed::Box<dyn BaseForecaster>> {
    match spec {
        ForecasterSpec::SeasonalNaive { period } => Ok(alloc::boxed::Box::new(SeasonalNaive { period: *period })),
        ForecasterSpec::HistoricalAverage { period } => Ok(alloc::boxed::Box::new(HistoricalAverage { period: *period })),
        ForecasterSpec::ExternalFile { path } => {
            bail!(Config, "forecaster tokens come from {path}; import them instead of generating")
        }
    }
}

/// Stride-1 forecasting windows of one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSet {
    /// First input step of each usable window.
    pub starts: Vec<usize>,
    pub input_len: usize,
    pub pred_len: usize,
    /// Windows dropped because some node had a missing value.
    pub skipped: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn input_range(&self, i: usize) -> Range<usize> {
        self.starts[i]..self.starts[i] + self.input_len
    }

    pub fn horizon_range(&self, i: usize) -> Range<usize> {
        let s = self.starts[i] + self.input_len;
        s..s + self.pred_len
    }
}

/// Closed-form window count for a gap-free split of `len` steps.
pub fn window_count(len: usize, input_len: usize, pred_len: usize) -> usize {
    (len + 1).saturating_sub(input_len + pred_len)
}

/// Every window whose input and horizon lie in `range` and are observed for
/// all nodes.
pub fn enumerate_windows(ds: &CityDataset, range: Range<usize>, input_len: usize, pred_len: usize) -> WindowSet {
    let span = input_len + pred_len;
    let mut starts = Vec::new();
    let mut skipped = 0;
    if range.len() >= span && range.end <= ds.len() {
        for s in range.start..=range.end - span {
            let ok = ds.nodes.iter().all(|n| n.values[s..s + span].iter().all(|v| v.is_some()));
            if ok {
                starts.push(s);
            } else {
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} windows with missing values");
    }
    WindowSet {
        starts,
        input_len,
        pred_len,
        skipped,
    }
}

/// Forecasts per (window, node) for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTokens {
    /// `samples x nodes x pred_len`.
    pub values: Tensor,
    /// Timestamp of the first input step of each window.
    pub window_starts: Vec<DateTime<Utc>>,
    pub node_ids: Vec<String>,
    pub input_len: usize,
    pub producer: String,
}

impl PredictionTokens {
    pub fn new(
        values: Tensor,
        window_starts: Vec<DateTime<Utc>>,
        node_ids: Vec<String>,
        input_len: usize,
        producer: String,
    ) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] != window_starts.len() || s[1] != node_ids.len() {
            bail!(
                Shape,
                "token tensor {:?} does not match {} windows x {} nodes",
                s,
                window_starts.len(),
                node_ids.len()
            );
        }
        values.check_finite("prediction tokens")?;
        Ok(Self {
            values,
            window_starts,
            node_ids,
            input_len,
            producer,
        })
    }

    /// `(samples, nodes, pred_len)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2])
    }

    pub fn pred_len(&self) -> usize {
        self.dims().2
    }

    pub fn token(&self, sample: usize, node: usize) -> &[f64] {
        let (_, n, l) = self.dims();
        let i = (sample * n + node) * l;
        &self.values.data()[i..i + l]
    }

    /// Checks shape and window alignment against the configured split.
    pub fn validate_against(&self, ds: &CityDataset, windows: &WindowSet) -> Result<()> {
        let (s, n, l) = self.dims();
        if l != windows.pred_len {
            bail!(Validation, "tokens have L_pred={l} but the configuration expects {}", windows.pred_len);
        }
        if self.input_len != windows.input_len {
            bail!(
                Validation,
                "tokens were produced with L_in={} but the configuration expects {}",
                self.input_len,
                windows.input_len
            );
        }
        let ids = ds.node_ids();
        if n != ids.len() {
            bail!(Validation, "tokens cover {n} nodes but the dataset has {}", ids.len());
        }
        if let Some(i) = (0..n).find(|&i| self.node_ids[i] != ids[i]) {
            bail!(
                Validation,
                "node {i} is {} in the tokens but {} in the dataset",
                self.node_ids[i],
                ids[i]
            );
        }
        if s != windows.len() {
            bail!(Validation, "tokens hold {s} windows but the split has {}", windows.len());
        }
        for (i, (&start, ts)) in windows.starts.iter().zip(&self.window_starts).enumerate() {
            let want = ds.timestamp(start);
            if *ts != want {
                bail!(
                    Validation,
                    "window {i} starts at {} in the tokens but {} in the split",
                    ts.to_rfc3339(),
                    want.to_rfc3339()
                );
            }
        }
        Ok(())
    }

    /// Rounds values to f32 precision, the storage precision of token files.
    pub fn round_to_f32(&mut self) {
        self.values.round_to_f32();
    }
}

/// History of `node` visible to window `i`: observed steps from
/// `observed_start` to the end of the window's input.
pub fn window_history(ds: &CityDataset, node: usize, observed_start: usize, windows: &WindowSet, i: usize) -> Vec<Option<f64>> {
    let end = windows.input_range(i).end;
    ds.nodes[node].values[observed_start.min(end)..end]
        .iter()
        .map(|v| v.map(|x| x as f64))
        .collect()
}

/// Runs `forecaster` over every window and node.
pub fn generate_tokens(
    ds: &CityDataset,
    windows: &WindowSet,
    observed_start: usize,
    forecaster: &dyn BaseForecaster,
) -> Result<PredictionTokens> {
    let n = ds.nodes.len();
    let mut values = Vec::with_capacity(windows.len() * n * windows.pred_len);
    let mut fallbacks = 0;
    for i in 0..windows.len() {
        for node in 0..n {
            let hist = window_history(ds, node, observed_start, windows, i);
            fallbacks += forecaster.falls_back(hist.len()) as usize;
            values.extend(forecaster.forecast(&hist, windows.pred_len));
        }
    }
    if fallbacks > 0 {
        log::warn!(
            "{}: {fallbacks} of {} forecasts had too little history and used persistence",
            forecaster.tag(),
            windows.len() * n
        );
    }
    let mut tokens = PredictionTokens::new(
        Tensor::from_vec(&[windows.len(), n, windows.pred_len], values)?,
        windows.starts.iter().map(|s| ds.timestamp(*s)).collect(),
        ds.node_ids(),
        windows.input_len,
        forecaster.tag(),
    )?;
    tokens.round_to_f32();
    Ok(tokens)
}

/// Observed horizon values aligned with the tokens' layout.
pub fn horizon_truth(ds: &CityDataset, windows: &WindowSet) -> Result<Tensor> {
    let n = ds.nodes.len();
    let mut out = Vec::with_capacity(windows.len() * n * windows.pred_len);
    for i in 0..windows.len() {
        for node in &ds.nodes {
            match node.window(windows.horizon_range(i)) {
                Some(v) => out.extend(v),
                None => bail!(Data, "window {i} has a missing horizon value for {}", node.node_id),
            }
        }
    }
    Tensor::from_vec(&[windows.len(), n, windows.pred_len], out)
}
