//! Run configuration: TOML file plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use strata_core::data::{DerivedTarget, SplitSpec, SyntheticProfile, DEFAULT_MAX_GAP, DEFAULT_SEGMENT_STRIDE};
use strata_core::encoder::EncoderConfig;
use strata_core::eval::PipelineConfig;
use strata_core::forecast::{ForecasterSpec, DEFAULT_INPUT_LEN, DEFAULT_PERIOD, DEFAULT_PRED_LEN};
use strata_core::kb::DEFAULT_SHRINKAGE;
use strata_core::reasoning::DEFAULT_PER_NODE;

use crate::dataset::CsvSchema;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::llm::LlmEndpointConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Every artifact lives under this directory.
    pub artifacts: PathBuf,
    /// Response cache of the remote reasoner.
    pub cache: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            artifacts: "artifacts".into(),
            cache: "artifacts/cache".into(),
        }
    }
}

/// Synthetic source city and derived target city.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub profile: SyntheticProfile,
    pub source_nodes: usize,
    pub source_days: u32,
    pub target_city: String,
    /// Target start, in days after the source start.
    pub target_offset_days: u32,
    pub target_days: u32,
    pub targets: Vec<DerivedTarget>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let targets = [(3usize, 0.6, 0.0), (11, 0.8, 10.0), (17, 1.0, 20.0)]
            .iter()
            .enumerate()
            .map(|(i, &(source_node, scale, offset))| DerivedTarget {
                source_node,
                scale,
                offset,
                capacity: 600,
                node_id: format!("T{i:02}"),
                context: format!(
                    "T{i:02}, synthetic-target: multi-storey carpark with 600 spaces near the city centre, used by commuters and shoppers."
                ),
            })
            .collect();
        Self {
            seed: 0,
            profile: SyntheticProfile::default(),
            source_nodes: 20,
            source_days: 30,
            target_city: "synthetic-target".into(),
            target_offset_days: 16,
            target_days: 14,
            targets,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub frequency: u32,
    pub max_gap: usize,
    pub schema: CsvSchema,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            frequency: 15,
            max_gap: DEFAULT_MAX_GAP,
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbConfig {
    /// Slicing stride of source segments.
    pub stride: usize,
    /// Off-diagonal covariance shrinkage.
    pub lambda: f64,
    /// Slicing stride of pretraining segments.
    pub pretrain_stride: usize,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            stride: DEFAULT_SEGMENT_STRIDE,
            lambda: DEFAULT_SHRINKAGE,
            pretrain_stride: DEFAULT_SEGMENT_STRIDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub input_len: usize,
    pub pred_len: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            input_len: DEFAULT_INPUT_LEN,
            pred_len: DEFAULT_PRED_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub per_node: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            per_node: DEFAULT_PER_NODE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Sampled source time windows (rows).
    pub rows: usize,
    /// Source carparks (columns); 0 takes every node.
    pub columns: usize,
    pub seed: u64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            rows: 24,
            columns: 0,
            seed: 0,
        }
    }
}

/// Everything a run needs; written next to the outputs of every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub ingest: IngestConfig,
    pub split: SplitSpec,
    pub encoder: EncoderConfig,
    pub kb: KbConfig,
    pub windows: WindowConfig,
    pub forecaster: ForecasterSpec,
    pub pipeline: PipelineConfig,
    pub llm: LlmEndpointConfig,
    pub sft: SftConfig,
    pub heatmap: HeatmapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            synth: SynthConfig::default(),
            ingest: IngestConfig::default(),
            split: SplitSpec::default(),
            encoder: EncoderConfig {
                max_segments_per_epoch: Some(4096),
                ..EncoderConfig::default()
            },
            kb: KbConfig::default(),
            windows: WindowConfig::default(),
            forecaster: ForecasterSpec::SeasonalNaive { period: DEFAULT_PERIOD },
            pipeline: PipelineConfig::default(),
            llm: LlmEndpointConfig::default(),
            sft: SftConfig::default(),
            heatmap: HeatmapConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is read as TOML and falls back to a
/// plain string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not KEY=VALUE")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply(root: &mut toml::Value, path: &[String], value: toml::Value) {
    let mut node = root;
    for key in &path[..path.len() - 1] {
        let table = match node {
            toml::Value::Table(t) => t,
            other => {
                *other = toml::Value::Table(toml::Table::new());
                other.as_table_mut().unwrap()
            }
        };
        node = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    if let toml::Value::Table(t) = node {
        t.insert(path[path.len() - 1].clone(), value);
    } else {
        *node = toml::Value::Table(toml::Table::from_iter([(path[path.len() - 1].clone(), value)]));
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = fsutil::read_string(path).map_err(|e| Error::Config(e.to_string()))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            // The forecaster is a tagged enum: replace it wholesale.
            if let Some(f) = table.get("forecaster") {
                root.as_table_mut().unwrap().insert("forecaster".into(), f.clone());
            }
            merge(&mut root, toml::Value::Table(table));
        }
        for spec in overrides {
            let (path, value) = parse_override(spec)?;
            apply(&mut root, &path, value);
        }
        let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.windows.input_len != self.encoder.segment_len {
            return Err(Error::Config(format!(
                "windows.input_len = {} must equal encoder.segment_len = {} (queries are embedded input windows)",
                self.windows.input_len, self.encoder.segment_len
            )));
        }
        if self.pipeline.k == 0 {
            return Err(Error::Config("pipeline.k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pipeline.alpha) {
            return Err(Error::Config("pipeline.alpha must lie in [0, 1]".into()));
        }
        if self.kb.stride == 0 || self.kb.pretrain_stride == 0 {
            return Err(Error::Config("strides must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of everything except file locations, so a run relocated to
    /// another directory keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        fsutil::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}
