use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use chrono::{DateTime, Datelike, SecondsFormat, TimeDelta, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

/// A regularly sampled sequence with its first timestamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedSequence {
    pub start: DateTime<Utc>,
    /// Minutes between samples.
    pub frequency: u32,
    pub values: Vec<f64>,
}

impl TimedSequence {
    pub fn step(&self) -> TimeDelta {
        TimeDelta::try_minutes(self.frequency as i64).unwrap()
    }

    pub fn time(&self, i: usize) -> DateTime<Utc> {
        self.start + self.step() * i as i32
    }

    /// Timestamp of the last sample.
    pub fn end(&self) -> DateTime<Utc> {
        self.time(self.values.len().saturating_sub(1))
    }

    /// Sub-sequence `range`.
    pub fn slice(&self, range: core::ops::Range<usize>) -> TimedSequence {
        TimedSequence {
            start: self.time(range.start),
            frequency: self.frequency,
            values: self.values[range].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Training,
    Inference,
}

/// Inputs of one prompt. Every `Option` is a required slot; the builder
/// names the first one that is missing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSlots {
    pub source_context: Option<String>,
    pub source_sequence: Option<TimedSequence>,
    pub target_context: Option<String>,
    pub target_history: Option<TimedSequence>,
    pub prediction_tokens: Option<Vec<f64>>,
    /// Name of the base model that produced the tokens.
    pub producer: String,
    /// Only for training prompts.
    pub ground_truth: Option<Vec<f64>>,
    /// Contexts of further retrieved entries, shown after the top one.
    pub extra_contexts: Vec<String>,
}

/// Ordered sections of a rendered prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub sections: Vec<(String, String)>,
    pub text: String,
}

/// Integers separated by `", "`.
pub fn render_values(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{}", math::round(*v) as i64);
    }
    s
}

pub fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn weekday_name(t: DateTime<Utc>) -> &'static str {
    match t.weekday() {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

fn duration_words(minutes: i64) -> String {
    match minutes {
        60 => String::from("1 hour"),
        m if m % 60 == 0 => format!("{} hours", m / 60),
        m => format!("{m} minutes"),
    }
}

/// `Given 3 hours of history A to B (Tuesday), analyze for the period C to D.`
pub fn horizon_statement(history: &TimedSequence, pred_len: usize, verb: &str) -> String {
    let n = history.values.len() as i64;
    let span = duration_words(n * history.frequency as i64);
    let h0 = history.time(history.values.len());
    let h1 = history.time(history.values.len() + pred_len - 1);
    format!(
        "Given {span} of history {} to {} ({}), {verb} the period {} to {}.",
        rfc3339(history.start),
        rfc3339(history.end()),
        weekday_name(history.end()),
        rfc3339(h0),
        rfc3339(h1)
    )
}

const ROLE: &str = "Role: You are an AI agent specialized in cross-city transfer learning analysis for parking availability.";

const TRAINING_OBJECTIVE: &str = "Objective: Do not output future parking values. Instead, use reasoning and causal inference to extract useful, generalizable hints that relate the inputs (textual context, source long-term sequence, target short-term history, and simulation predictions) to the ground truth sequence. These hints will be used later to fine-tune a student model. Focus on: (i) bias/scale calibration of simulation predictions, (ii) lag/seasonality/day-of-week effects, (iii) cross-city pattern alignment.";

const INFERENCE_OBJECTIVE: &str = "Objective: Reason over the retrieved source context, the target history and the simulation predictions to correct the simulation predictions for the target carpark. Focus on: (i) bias/scale calibration of simulation predictions, (ii) lag/seasonality/day-of-week effects, (iii) cross-city pattern alignment.";

const GOALS: &str = "Analysis Goals (what to extract):
- Cross-city alignment: Which parts of the source long-term sequence best align with the target history (e.g., day-of-week, hour-of-day, shopping-peak proximity, transit adjacency)? Provide a short rationale.
- Lag/seasonality cues: Dominant lags (e.g., 1, 2, 4 steps), diurnal phase, weekday/weekend effects, and expected monotonicity segments over the horizon.
- Change-points/regimes: Any shift boundaries (e.g., pre-/post-evening peak) and how they affect corrections.";

const TRAINING_RULES: &str = "Rules:
(R1) Do not output any numeric forecasts or restate <ground truth>.
(R2) Reason causally from text + sequences; prefer explanations tied to retail/transit factors and diurnal/weekday structure.";

/// Output contract for inference answers.
pub fn inference_rules(pred_len: usize) -> String {
    format!(
        "Rules:
(R1) End the answer with exactly one line of the form FORECAST: v1, v2, ..., v{pred_len} holding the {pred_len} forecast values as integers between zero and the carpark capacity.
(R2) Reason causally from text + sequences; prefer explanations tied to retail/transit factors and diurnal/weekday structure."
    )
}

fn require<'a, T>(slot: &'a Option<T>, name: &str) -> Result<&'a T> {
    match slot {
        Some(v) => Ok(v),
        None => bail!(Validation, "prompt slot {name} is missing"),
    }
}

/// Renders the reasoning prompt. Training prompts carry the ground truth;
/// inference prompts must not.
pub fn build_prompt(slots: &PromptSlots, mode: PromptMode) -> Result<PromptBundle> {
    let source_context = require(&slots.source_context, "(1) source context")?;
    let source = require(&slots.source_sequence, "(2) source long-term sequence")?;
    let target_context = require(&slots.target_context, "(4) target context")?;
    let history = require(&slots.target_history, "(5) target history")?;
    let tokens = require(&slots.prediction_tokens, "(6) prediction tokens")?;
    let truth = match (mode, &slots.ground_truth) {
        (PromptMode::Training, Some(t)) => Some(t),
        (PromptMode::Training, None) => bail!(Validation, "prompt slot ground truth is missing in training mode"),
        (PromptMode::Inference, Some(_)) => {
            bail!(Validation, "ground truth supplied to an inference prompt; it must stay masked")
        }
        (PromptMode::Inference, None) => None,
    };
    if history.values.is_empty() || tokens.is_empty() {
        bail!(Validation, "target history and prediction tokens must be non-empty");
    }
    if let Some(t) = truth {
        if t.len() != tokens.len() {
            bail!(Validation, "ground truth has {} steps, tokens have {}", t.len(), tokens.len());
        }
    }
    let pred_len = tokens.len();
    let mut sections: Vec<(String, String)> = Vec::new();
    let mut push = |name: &str, body: String| sections.push((String::from(name), body));
    let objective = match mode {
        PromptMode::Training => TRAINING_OBJECTIVE,
        PromptMode::Inference => INFERENCE_OBJECTIVE,
    };
    push("header", format!("[INST]\n{ROLE}\n{objective}"));
    let mut input = String::from("Input Data:\n");
    let _ = writeln!(input, "(1) Source city textual information: {source_context}");
    let _ = writeln!(
        input,
        "(2) Source city long-term sequence: Retrieved multi-week availability series with high semantic similarity to the target carpark, {} to {} every {} minutes: {}.",
        rfc3339(source.start),
        rfc3339(source.end()),
        source.frequency,
        render_values(&source.values)
    );
    let verb = match mode {
        PromptMode::Training => "analyze for",
        PromptMode::Inference => "forecast",
    };
    let _ = writeln!(input, "(3) Prediction horizon: {}", horizon_statement(history, pred_len, verb));
    let _ = writeln!(input, "(4) Target city textual information: {target_context}");
    let _ = writeln!(
        input,
        "(5) Target city historical records (last {}): {}.",
        duration_words(history.values.len() as i64 * history.frequency as i64),
        render_values(&history.values)
    );
    let _ = write!(
        input,
        "(6) Simulation predictions (base ST model, {}): {}.",
        slots.producer,
        render_values(tokens)
    );
    for (i, c) in slots.extra_contexts.iter().enumerate() {
        let _ = write!(input, "\nFurther retrieved source {}: {c}", i + 2);
    }
    push("input", input);
    if let Some(t) = truth {
        push(
            "supervision",
            format!(
                "Training-time supervision: The ground truth for the horizon is provided as {}. Use it only to infer relationships (e.g., bias/scale, residual directions, regime shifts). Do not echo the ground truth or produce numeric forecasts.",
                render_values(t)
            ),
        );
    }
    push("goals", String::from(GOALS));
    match mode {
        PromptMode::Training => push("rules", format!("{TRAINING_RULES}\n[/INST]")),
        PromptMode::Inference => push("rules", format!("{}\n[/INST]", inference_rules(pred_len))),
    }
    let text = sections.iter().map(|(_, b)| b.as_str()).collect::<Vec<_>>().join("\n\n") + "\n";
    Ok(PromptBundle { mode, sections, text })
}
