//! Retrieval-guided reasoning: prompt rendering, teacher validation,
//! fine-tuning corpus assembly, and forecast extraction.

mod case;
mod infer;
mod prompt;
mod sft;
mod teacher;


pub use case::{slot_profile, PromptOptions, ReasoningCase, RetrievedSource};
pub use infer::{
    parse_forecast, reask_suffix, run_inference, Incident, InferenceOutcome, Reasoner, StubReasoner, DEFAULT_ALPHA,
    MAX_RESCALE,
};
pub use prompt::{
    build_prompt, horizon_statement, inference_rules, render_values, rfc3339, weekday_name, PromptBundle, PromptMode,
    PromptSlots, TimedSequence,
};
pub use sft::{build_sft_instance, sft_user_message, stratified_sample, ChatMessage, SftInstance, DEFAULT_PER_NODE};
pub use teacher::{
    extract_hints, extract_numbers, qualitative_trajectory, redact_horizon_numbers, stub_teacher_response,
    validate_teacher, TeacherResponse, Verdict, ECHO_TOLERANCE,
};
