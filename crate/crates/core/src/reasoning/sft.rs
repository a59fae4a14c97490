use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::case::ReasoningCase;
use super::prompt::{horizon_statement, render_values};
use super::teacher::{qualitative_trajectory, redact_horizon_numbers, TeacherResponse};
use crate::error::{bail, Result};

/// Instances drawn per target node.
pub const DEFAULT_PER_NODE: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// One chat-format fine-tuning example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftInstance {
    pub messages: Vec<ChatMessage>,
}

/// Student input: target description, short-term history and tokens.
pub fn sft_user_message(case: &ReasoningCase) -> String {
    let n = case.pred_len();
    format!(
        "[INST]\nRole: You forecast parking availability for a target carpark using its description, its recent history and the simulation predictions of a base spatio-temporal model.\n\
         Target city textual information: {}\n\
         Prediction horizon: {}\n\
         Target city historical records: {}.\n\
         Simulation predictions (base ST model, {}): {}.\n\
         Reason about calibration, seasonality and regime changes, then end with one line FORECAST: followed by {n} comma-separated integers.\n[/INST]",
        case.target_context,
        horizon_statement(&case.history, n, "forecast"),
        render_values(&case.history.values),
        case.producer,
        render_values(&case.tokens)
    )
}

/// Pairs the student input with the teacher's hints and a qualitative
/// description of the ground truth. Hints are scrubbed of any number that
/// equals a horizon value.
pub fn build_sft_instance(case: &ReasoningCase, teacher: &TeacherResponse) -> Result<SftInstance> {
    let Some(truth) = &case.ground_truth else {
        bail!(Validation, "SFT instance for {} needs the ground truth", case.node_id);
    };
    if !teacher.verdict.is_accept() {
        bail!(Validation, "teacher response for {} was rejected", case.node_id);
    }
    let hints = redact_horizon_numbers(&teacher.hints.join("\n\n"), truth);
    let last = case.history.values.last().copied().unwrap_or(0.0);
    let trajectory = qualitative_trajectory(last, truth, case.capacity);
    Ok(SftInstance {
        messages: alloc::vec![
            ChatMessage {
                role: String::from("user"),
                content: sft_user_message(case),
            },
            ChatMessage {
                role: String::from("assistant"),
                content: format!("{hints}\n\nExpected trajectory: {trajectory}"),
            },
        ],
    })
}

/// Picks up to `count` windows spread over `count` hour-of-day strata, one
/// random window per stratum, topping up from the remainder when strata are
/// empty. Returns sorted indices into `hours`.
pub fn stratified_sample(hours: &[u32], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = crate::nn::seeded(seed);
    if count == 0 || hours.is_empty() {
        return Vec::new();
    }
    let mut strata: Vec<Vec<usize>> = alloc::vec![Vec::new(); count];
    for (i, h) in hours.iter().enumerate() {
        strata[(*h as usize % 24) * count / 24].push(i);
    }
    let mut picked = Vec::new();
    for s in &strata {
        if let Some(&i) = s.choose(&mut rng) {
            picked.push(i);
        }
    }
    if picked.len() < count {
        let mut rest: Vec<usize> = (0..hours.len()).filter(|i| !picked.contains(i)).collect();
        rest.shuffle(&mut rng);
        picked.extend(rest.into_iter().take(count - picked.len()));
    }
    picked.sort_unstable();
    picked
}
