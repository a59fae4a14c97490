//! Knowledge-base directory: `manifest.json`, `embeddings.f32` and the
//! source dataset the entries point into.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use strata_core::kb::{CovarianceMode, KbEntry, KnowledgeBase, SourceRef};

use crate::error::{Error, Result};
use crate::fsutil;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const EMBEDDINGS: &str = "embeddings.f32";
pub const SOURCE: &str = "source.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub id: u64,
    pub node_id: String,
    pub node_index: usize,
    pub segment_start: usize,
    pub segment_len: usize,
    /// Long-term sequence as a grid range of the source dataset.
    pub span: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbManifest {
    pub format_version: u32,
    pub encoder_hash: String,
    pub covariance_mode: CovarianceMode,
    pub lambda: f64,
    pub dim: usize,
    pub stride: usize,
    pub config_hash: String,
    pub source_city: String,
    /// Context text per source node.
    pub contexts: BTreeMap<String, String>,
    pub entries: Vec<EntryRecord>,
}

pub fn save_kb(dir: &Path, kb: &KnowledgeBase, stride: usize, lambda: f64, config_hash: &str) -> Result<()> {
    let src = kb.source();
    let manifest = KbManifest {
        format_version: FORMAT_VERSION,
        encoder_hash: kb.encoder_hash().to_string(),
        covariance_mode: kb.covariance().mode,
        lambda,
        dim: kb.dim(),
        stride,
        config_hash: config_hash.to_string(),
        source_city: src.city_name.clone(),
        contexts: src.node_context.clone(),
        entries: kb
            .entries()
            .iter()
            .map(|e| EntryRecord {
                id: e.id,
                node_id: e.source.node_id.clone(),
                node_index: e.source.node_index,
                segment_start: e.source.segment_start,
                segment_len: e.source.segment_len,
                span: [e.source.span.start, e.source.span.end],
            })
            .collect(),
    };
    let bytes = fsutil::f32_le_bytes(kb.entries().iter().flat_map(|e| e.embedding.iter().copied()));
    fsutil::write_json(&dir.join(SOURCE), src)?;
    fsutil::write_atomic(&dir.join(EMBEDDINGS), &bytes)?;
    fsutil::write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_manifest(dir: &Path) -> Result<KbManifest> {
    let path = dir.join(MANIFEST);
    fsutil::require(&path, "build-kb")?;
    let m: KbManifest = fsutil::read_json(&path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported format version {}", m.format_version)));
    }
    Ok(m)
}

pub fn load_kb(dir: &Path) -> Result<(KnowledgeBase, KbManifest)> {
    let m = load_manifest(dir)?;
    let emb_path = dir.join(EMBEDDINGS);
    let values = fsutil::f32_le_values(&emb_path, &fsutil::read(&emb_path)?, m.entries.len() * m.dim)?;
    let mut source: strata_core::data::CityDataset = fsutil::read_json(&dir.join(SOURCE))?;
    source.node_context.extend(m.contexts.clone());
    let entries = m
        .entries
        .iter()
        .zip(values.chunks(m.dim.max(1)))
        .map(|(r, v)| KbEntry {
            id: r.id,
            embedding: v.to_vec(),
            source: SourceRef {
                node_id: r.node_id.clone(),
                node_index: r.node_index,
                segment_start: r.segment_start,
                segment_len: r.segment_len,
                span: r.span[0]..r.span[1],
            },
        })
        .collect();
    let kb = KnowledgeBase::restore(source, entries, m.encoder_hash.clone(), m.lambda)?;
    if kb.covariance().mode != m.covariance_mode {
        return Err(Error::format(
            dir.join(MANIFEST),
            format!("covariance mode {:?} does not match the stored {:?}", kb.covariance().mode, m.covariance_mode),
        ));
    }
    Ok((kb, m))
}
