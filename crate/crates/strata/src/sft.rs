//! Chat-format fine-tuning corpus as JSON Lines.

use std::path::Path;

use strata_core::reasoning::SftInstance;

use crate::error::{Error, Result};
use crate::fsutil;

pub fn write_sft_jsonl(path: &Path, instances: &[SftInstance]) -> Result<()> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    fsutil::write_atomic(path, out.as_bytes())
}

pub fn read_sft_jsonl(path: &Path) -> Result<Vec<SftInstance>> {
    fsutil::read_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}
