use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::case::{slot_profile, ReasoningCase};
use super::prompt::render_values;
use crate::error::{bail, Result};
use crate::math;

/// Default share of the base tokens in the stub blend.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Upper bound on the moment-matching scale factor.
pub const MAX_RESCALE: f64 = 10.0;

/// Something that answers a rendered prompt.
pub trait Reasoner {
    fn name(&self) -> String;
    /// `case` is available to offline reasoners; remote ones see only `prompt`.
    fn complete(&self, prompt: &str, case: &ReasoningCase) -> Result<String>;
}

/// Deterministic stand-in for the fine-tuned student:
/// `alpha * tokens + (1 - alpha) * rescaled source profile`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubReasoner {
    pub alpha: f64,
}

impl Default for StubReasoner {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA }
    }
}

impl StubReasoner {
    pub fn forecast(&self, case: &ReasoningCase) -> Vec<f64> {
        let Some(top) = case.retrieved.first() else {
            return case.tokens.clone();
        };
        if self.alpha >= 1.0 {
            return case.tokens.clone();
        }
        let p_hist = slot_profile(&top.sequence, &case.history_times());
        let p_hor = slot_profile(&top.sequence, &case.horizon_times());
        let (mp, sp) = math::mean_std(&p_hist);
        let (my, sy) = math::mean_std(&case.history.values);
        let scale = if sp > 1e-9 { (sy / sp).min(MAX_RESCALE) } else { 0.0 };
        case.tokens
            .iter()
            .zip(&p_hor)
            .map(|(b, p)| {
                let r = my + scale * (p - mp);
                (self.alpha * b + (1.0 - self.alpha) * r).clamp(0.0, case.capacity)
            })
            .collect()
    }
}

impl Reasoner for StubReasoner {
    fn name(&self) -> String {
        format!("stub(alpha={})", self.alpha)
    }

    fn complete(&self, _prompt: &str, case: &ReasoningCase) -> Result<String> {
        let f = self.forecast(case);
        let why = match case.retrieved.first() {
            Some(r) if self.alpha < 1.0 => format!(
                "Aligned retrieved source {} ({}) by weekday and hour of day and rescaled it to the target history before blending with the simulation predictions.",
                r.id, r.node_id
            ),
            _ => String::from("Kept the simulation predictions unchanged."),
        };
        Ok(format!("{why}\nFORECAST: {}\n", render_values(&f)))
    }
}

/// Reads the last `FORECAST:` line: exactly `pred_len` finite numbers,
/// clamped to `[0, capacity]`.
pub fn parse_forecast(text: &str, pred_len: usize, capacity: f64) -> Result<Vec<f64>> {
    let Some(line) = text
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.len() >= 9 && l[..9].eq_ignore_ascii_case("forecast:"))
    else {
        bail!(Parse, "no FORECAST line in the model output");
    };
    let body = line[9..].trim().trim_end_matches('.');
    let mut out = Vec::with_capacity(pred_len);
    for part in body.split(',') {
        let p = part.trim();
        match p.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v.clamp(0.0, capacity)),
            _ => bail!(Parse, "FORECAST value {p:?} is not a finite number"),
        }
    }
    if out.len() != pred_len {
        bail!(Parse, "FORECAST has {} values, expected {pred_len}", out.len());
    }
    Ok(out)
}

/// A forecast that fell back to the base tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub node_id: String,
    pub window_start: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub forecast: Vec<f64>,
    pub raw: String,
    pub incident: Option<Incident>,
}

/// Appended to the prompt when the first answer could not be parsed.
pub fn reask_suffix(pred_len: usize) -> String {
    format!(
        "\n\nYour previous answer did not end with a valid forecast. Reply with exactly one line: FORECAST: followed by {pred_len} comma-separated integers."
    )
}

/// Asks once, re-asks once on a parse failure, then falls back to the tokens.
pub fn run_inference(reasoner: &dyn Reasoner, prompt: &str, case: &ReasoningCase) -> Result<InferenceOutcome> {
    let n = case.pred_len();
    let first = reasoner.complete(prompt, case)?;
    let err = match parse_forecast(&first, n, case.capacity) {
        Ok(f) => {
            return Ok(InferenceOutcome {
                forecast: f,
                raw: first,
                incident: None,
            })
        }
        Err(e) => e,
    };
    log::warn!("unparseable answer for {}: {err}; asking again", case.node_id);
    let retry_prompt = format!("{prompt}{}", reask_suffix(n));
    let second = reasoner.complete(&retry_prompt, case)?;
    match parse_forecast(&second, n, case.capacity) {
        Ok(f) => Ok(InferenceOutcome {
            forecast: f,
            raw: second,
            incident: None,
        }),
        Err(e2) => {
            let incident = Incident {
                node_id: case.node_id.clone(),
                window_start: super::prompt::rfc3339(case.history.start),
                reason: format!("{err}; after re-ask: {e2}"),
            };
            log::warn!("falling back to base tokens for {} at {}", incident.node_id, incident.window_start);
            Ok(InferenceOutcome {
                forecast: case.tokens.iter().map(|v| v.clamp(0.0, case.capacity)).collect(),
                raw: second,
                incident: Some(incident),
            })
        }
    }
}
