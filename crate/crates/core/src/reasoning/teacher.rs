use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::prompt::render_values;
use crate::math;

/// Relative tolerance for a number to count as restating a ground-truth value.
pub const ECHO_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(String),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// A teacher completion with its extracted hints and verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub raw: String,
    pub hints: Vec<String>,
    pub verdict: Verdict,
}

impl TeacherResponse {
    pub fn new(raw: String, ground_truth: &[f64]) -> Self {
        let verdict = validate_teacher(&raw, ground_truth);
        Self {
            hints: extract_hints(&raw),
            raw,
            verdict,
        }
    }
}

/// Decimal numbers in reading order; any other character separates.
pub fn extract_numbers(text: &str) -> Vec<f64> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if !b[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if let Ok(v) = text[start..i].parse::<f64>() {
            out.push(v);
        }
    }
    out
}

fn close(x: f64, truth: f64) -> bool {
    math::abs(x - truth) <= ECHO_TOLERANCE * math::abs(truth).max(1.0)
}

/// Rule R1: a response fails if it is empty, contains a verbatim run of two
/// or more rendered ground-truth values, or contains at least `L_pred / 2`
/// consecutive numbers each within 5% of an aligned run of ground-truth values.
pub fn validate_teacher(response: &str, ground_truth: &[f64]) -> Verdict {
    if response.trim().is_empty() {
        return Verdict::Reject(String::from("empty response carries no hints"));
    }
    for w in ground_truth.windows(2) {
        let joined = render_values(w);
        let tight = joined.replace(", ", ",");
        if response.contains(&joined) || response.contains(&tight) {
            return Verdict::Reject(format!("restates ground truth verbatim ({joined})"));
        }
    }
    let nums = extract_numbers(response);
    let need = (ground_truth.len() / 2).max(1);
    for i in 0..nums.len() {
        for j in 0..ground_truth.len() {
            let mut run = 0;
            while i + run < nums.len() && j + run < ground_truth.len() && close(nums[i + run], ground_truth[j + run]) {
                run += 1;
            }
            if run >= need {
                return Verdict::Reject(format!(
                    "{run} consecutive numbers track the ground truth (need fewer than {need})"
                ));
            }
        }
    }
    Verdict::Accept
}

/// Non-empty paragraphs of a response, trimmed.
pub fn extract_hints(response: &str) -> Vec<String> {
    response
        .split("\n\n")
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect()
}

/// Replaces every number equal (after rounding) to a horizon value.
pub fn redact_horizon_numbers(text: &str, horizon: &[f64]) -> String {
    let targets: Vec<i64> = horizon.iter().map(|v| math::round(*v) as i64).collect();
    let mut out = String::with_capacity(text.len());
    let mut digits = String::new();
    let flush = |digits: &mut String, out: &mut String| {
        if !digits.is_empty() {
            let hit = digits.parse::<i64>().map(|v| targets.contains(&v)).unwrap_or(false);
            if hit {
                out.push_str("[value]");
            } else {
                out.push_str(digits);
            }
            digits.clear();
        }
    };
    for c in text.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else {
            flush(&mut digits, &mut out);
            out.push(c);
        }
    }
    flush(&mut digits, &mut out);
    out
}

fn slope_phrase(delta: f64, capacity: f64) -> &'static str {
    let r = delta / capacity.max(1.0);
    if r <= -0.08 {
        "declines steeply"
    } else if r <= -0.02 {
        "declines gently"
    } else if r < 0.02 {
        "holds steady"
    } else if r < 0.08 {
        "rises gently"
    } else {
        "rises steeply"
    }
}

fn level_phrase(level: f64, capacity: f64) -> &'static str {
    let r = level / capacity.max(1.0);
    if r >= 0.9 {
        "near capacity"
    } else if r >= 0.6 {
        "at a high level"
    } else if r >= 0.3 {
        "at a moderate level"
    } else if r >= 0.1 {
        "at a low level"
    } else {
        "near empty"
    }
}

/// Describes a horizon by slope over its thirds and its closing level,
/// without any digits.
pub fn qualitative_trajectory(last_observed: f64, horizon: &[f64], capacity: f64) -> String {
    let n = horizon.len();
    if n == 0 {
        return String::from("no horizon to describe");
    }
    let names = ["first third", "middle third", "final third"];
    let mut parts = Vec::new();
    let mut prev = last_observed;
    for k in 0..3 {
        let (a, b) = (k * n / 3, (k + 1) * n / 3);
        if a == b {
            continue;
        }
        let end = horizon[b - 1];
        parts.push(format!("over the {} availability {}", names[k], slope_phrase(end - prev, capacity)));
        prev = end;
    }
    let mut s = parts.join(", then ");
    s.push_str(&format!(", closing {}.", level_phrase(horizon[n - 1], capacity)));
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => s,
    }
}

/// Offline teacher: describes calibration of the tokens against the
/// ground truth in words, citing only the capacity.
pub fn stub_teacher_response(
    target_context: &str,
    history: &[f64],
    tokens: &[f64],
    ground_truth: &[f64],
    capacity: f64,
) -> String {
    let n = tokens.len().min(ground_truth.len()).max(1);
    let bias: f64 = tokens.iter().zip(ground_truth).map(|(p, t)| p - t).sum::<f64>() / n as f64;
    let bias_text = if math::abs(bias) < 0.02 * capacity {
        "track the observed trajectory closely, so little bias correction is needed"
    } else if bias > 0.0 {
        "sit above the observed trajectory, so they should be scaled down towards the target level"
    } else {
        "sit below the observed trajectory, so they should be lifted towards the target level"
    };
    let last = history.last().copied().unwrap_or(0.0);
    let trend = qualitative_trajectory(last, ground_truth, capacity);
    let place = target_context.split([',', '.', ';']).next().unwrap_or("The target carpark").trim();
    let cap = math::round(capacity) as i64;
    format!(
        "The retrieved source carpark and {place} share a comparable diurnal rhythm, so the source long-term profile at the same weekday and hour is a useful template once rescaled to the target city scale.\n\n\
         The simulation predictions {bias_text}. The horizon follows the source phase: {}\n\n\
         Corrections should respect the capacity of {cap} spaces and keep the diurnal phase of the retrieved source sequence aligned with the target history.",
        lowercase_first(&trend)
    )
}

fn lowercase_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
