use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::prompt::{PromptMode, PromptSlots, TimedSequence};
use crate::math;

/// One retrieved source entry with its long-term sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSource {
    pub id: u64,
    pub score: f64,
    pub weight: f64,
    pub node_id: String,
    pub context: String,
    /// The long-term sequence `S`.
    pub sequence: TimedSequence,
    /// Offset of the matched segment inside `sequence`.
    pub segment_offset: usize,
    pub segment_len: usize,
}

/// Everything known about one (window, node) forecasting case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningCase {
    pub node_id: String,
    pub capacity: f64,
    pub target_context: String,
    pub history: TimedSequence,
    pub tokens: Vec<f64>,
    pub producer: String,
    /// Best first.
    pub retrieved: Vec<RetrievedSource>,
    pub ground_truth: Option<Vec<f64>>,
}

/// How much retrieved material goes into a prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptOptions {
    /// Steps of the top retrieved sequence shown verbatim.
    pub source_steps: usize,
    /// Number of retrieved contexts listed, including the top one.
    pub contexts: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            source_steps: 672,
            contexts: 3,
        }
    }
}

impl ReasoningCase {
    pub fn pred_len(&self) -> usize {
        self.tokens.len()
    }

    /// Timestamps of the forecast horizon.
    pub fn horizon_times(&self) -> Vec<DateTime<Utc>> {
        let n = self.history.values.len();
        (0..self.pred_len()).map(|h| self.history.time(n + h)).collect()
    }

    pub fn history_times(&self) -> Vec<DateTime<Utc>> {
        (0..self.history.values.len()).map(|i| self.history.time(i)).collect()
    }

    /// Prompt slots. The top retrieved sequence is cut to a window of
    /// `source_steps` that ends with the matched segment where possible.
    pub fn slots(&self, opts: &PromptOptions, mode: PromptMode) -> PromptSlots {
        let top = self.retrieved.first();
        let source_sequence = top.map(|r| {
            let len = r.sequence.values.len();
            let take = opts.source_steps.clamp(1, len.max(1));
            let end = (r.segment_offset + r.segment_len).clamp(take.min(len), len);
            r.sequence.slice(end - take..end)
        });
        PromptSlots {
            source_context: top.map(|r| r.context.clone()),
            source_sequence,
            target_context: Some(self.target_context.clone()),
            target_history: Some(self.history.clone()),
            prediction_tokens: Some(self.tokens.clone()),
            producer: self.producer.clone(),
            ground_truth: match mode {
                PromptMode::Training => self.ground_truth.clone(),
                PromptMode::Inference => None,
            },
            extra_contexts: self
                .retrieved
                .iter()
                .skip(1)
                .take(opts.contexts.saturating_sub(1))
                .map(|r| r.context.clone())
                .collect(),
        }
    }
}

fn minute_of_day(t: DateTime<Utc>) -> u32 {
    t.hour() * 60 + t.minute()
}

/// Average of `seq` at the same weekday and time of day as each of `times`,
/// falling back to the same time of day on any weekday, then to the overall
/// mean.
pub fn slot_profile(seq: &TimedSequence, times: &[DateTime<Utc>]) -> Vec<f64> {
    let mut by_week: BTreeMap<(u32, u32), (f64, usize)> = BTreeMap::new();
    let mut by_day: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (i, v) in seq.values.iter().enumerate() {
        let t = seq.time(i);
        let m = minute_of_day(t);
        let e = by_week.entry((t.weekday().num_days_from_monday(), m)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
        let e = by_day.entry(m).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let overall = math::mean(&seq.values);
    times
        .iter()
        .map(|t| {
            let m = minute_of_day(*t);
            if let Some((s, n)) = by_week.get(&(t.weekday().num_days_from_monday(), m)) {
                s / *n as f64
            } else if let Some((s, n)) = by_day.get(&m) {
                s / *n as f64
            } else {
                overall
            }
        })
        .collect()
}
