//! Token exchange files: a JSON manifest plus a float32 block in
//! `(sample, node, step)` row-major order.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use strata_core::data::CityDataset;
use strata_core::forecast::{PredictionTokens, WindowSet};
use strata_core::nn::Tensor;

use crate::error::{Error, Result};
use crate::fsutil;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenManifest {
    pub format_version: u32,
    pub producer: String,
    /// `[samples, nodes, pred_len]`.
    pub shape: [usize; 3],
    pub input_len: usize,
    pub window_starts: Vec<DateTime<Utc>>,
    pub node_ids: Vec<String>,
    /// File name of the float block, relative to the manifest.
    pub data_file: String,
    #[serde(default)]
    pub stamp: serde_json::Value,
}

/// `foo.json` -> `foo.f32`.
pub fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

pub fn save_tokens(manifest_path: &Path, tokens: &PredictionTokens, stamp: serde_json::Value) -> Result<()> {
    let (s, n, l) = tokens.dims();
    let data = data_path(manifest_path);
    let m = TokenManifest {
        format_version: FORMAT_VERSION,
        producer: tokens.producer.clone(),
        shape: [s, n, l],
        input_len: tokens.input_len,
        window_starts: tokens.window_starts.clone(),
        node_ids: tokens.node_ids.clone(),
        data_file: data.file_name().unwrap().to_string_lossy().into_owned(),
        stamp,
    };
    fsutil::write_atomic(&data, &fsutil::f32_le_bytes(tokens.values.data().iter().copied()))?;
    fsutil::write_json(manifest_path, &m)
}

pub fn load_tokens(manifest_path: &Path, step: &'static str) -> Result<(PredictionTokens, TokenManifest)> {
    fsutil::require(manifest_path, step)?;
    let m: TokenManifest = fsutil::read_json(manifest_path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(manifest_path, format!("unsupported format version {}", m.format_version)));
    }
    let data = manifest_path.with_file_name(&m.data_file);
    let count = m.shape.iter().product();
    let values = fsutil::f32_le_values(&data, &fsutil::read(&data)?, count)?;
    let tokens = PredictionTokens::new(
        Tensor::from_vec(&m.shape, values)?,
        m.window_starts.clone(),
        m.node_ids.clone(),
        m.input_len,
        m.producer.clone(),
    )?;
    Ok((tokens, m))
}

/// Digest of a manifest and its float block.
pub fn tokens_sha256(manifest_path: &Path) -> Result<String> {
    fsutil::files_sha256(&[manifest_path, &data_path(manifest_path)])
}

/// Loads externally produced tokens and checks them against the configured
/// windows of `ds`.
pub fn import_external_tokens(path: &Path, ds: &CityDataset, windows: &WindowSet) -> Result<PredictionTokens> {
    if !path.exists() {
        return Err(Error::Config(format!("external token file {} does not exist", path.display())));
    }
    let (tokens, _) = load_tokens(path, "gen-tokens")?;
    tokens.validate_against(ds, windows)?;
    Ok(tokens)
}
