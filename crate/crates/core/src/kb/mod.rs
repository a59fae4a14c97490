//! Source-domain knowledge base with hybrid L2/Mahalanobis retrieval.
//!
//! Entries pair a frozen segment embedding with a reference into the
//! long-term source series and the node's context text. Queries are answered
//! by an exact scan; every entry is whitened once at build time so a query
//! costs one triangular solve plus a linear pass.

mod covariance;
mod linalg;
mod weight;


use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{slice_segments, CityDataset};
use crate::encoder::Encoder;
use crate::error::{bail, Result};
use crate::math;

pub use covariance::{CovarianceMode, CovarianceSummary, DEFAULT_SHRINKAGE, VARIANCE_FLOOR};
pub use linalg::{cholesky, solve_lower};
pub use weight::{similarity_weight, similarity_weights, z_normalize, Heatmap, WEIGHT_EPS};

/// Where an entry's long-term context lives in the source data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub node_id: String,
    pub node_index: usize,
    /// First step of the embedded segment.
    pub segment_start: usize,
    pub segment_len: usize,
    /// Gap-free span of the node's series that contains the segment.
    pub span: Range<usize>,
}

/// One stored source segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: u64,
    /// Row-major flattened `L' x d` embedding.
    pub embedding: Vec<f64>,
    pub source: SourceRef,
}

/// Distances between two flattened embeddings.
pub fn l2_distance(q: &[f64], v: &[f64]) -> Result<f64> {
    if q.len() != v.len() {
        bail!(Shape, "embedding lengths differ: {} vs {}", q.len(), v.len());
    }
    Ok(math::sqrt(q.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()))
}

/// `sqrt((q - v)^T Sigma^{-1} (q - v))` through the Cholesky factor.
pub fn mahalanobis_distance(q: &[f64], v: &[f64], cov: &CovarianceSummary) -> Result<f64> {
    if q.len() != v.len() || q.len() != cov.dim {
        bail!(Shape, "expected {}-dimensional embeddings, got {} and {}", cov.dim, q.len(), v.len());
    }
    let diff: Vec<f64> = q.iter().zip(v).map(|(a, b)| a - b).collect();
    Ok(norm(&cov.whiten(&diff)))
}

/// `-(D_L2 + D_Mah) / 2`.
pub fn similarity(q: &[f64], v: &[f64], cov: &CovarianceSummary) -> Result<f64> {
    Ok(-0.5 * (l2_distance(q, v)? + mahalanobis_distance(q, v, cov)?))
}

fn norm(x: &[f64]) -> f64 {
    math::sqrt(x.iter().map(|a| a * a).sum())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Ranking order: higher score first, then ascending id.
pub fn rank_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// One retrieved entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: u64,
    pub score: f64,
    /// Normalized similarity weight among the returned hits, in `(0, 1]`.
    pub weight: f64,
    pub source: SourceRef,
    pub context: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    pub encoder_hash: String,
    pub hits: Vec<RetrievalHit>,
}

/// Anything that can pick source segments for a raw target slice.
pub trait Retriever {
    fn retrieve(&self, target_slice: &[f64], k: usize) -> Result<RetrievalResult>;
    /// The knowledge base hits refer to.
    fn knowledge_base(&self) -> &KnowledgeBase;
}

/// Immutable store of embedded source segments.
#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    source: CityDataset,
    entries: Vec<KbEntry>,
    encoder_hash: String,
    covariance: CovarianceSummary,
    whitened: Vec<Vec<f64>>,
    dim: usize,
}

impl KnowledgeBase {
    /// Embeds every gap-free window of `source` at `stride` with `encoder`.
    pub fn build(encoder: &Encoder, source: &CityDataset, stride: usize, lambda: f64) -> Result<Self> {
        let len = encoder.config().segment_len;
        let hash = encoder.fingerprint();
        let mut entries = Vec::new();
        let spans: Vec<Vec<Range<usize>>> = source.nodes.iter().map(|n| n.usable_spans()).collect();
        for seg in slice_segments(source, len, stride) {
            let emb = encoder.embed_values(&seg.values)?;
            let span = spans[seg.node_index]
                .iter()
                .find(|s| s.contains(&seg.start_index))
                .cloned()
                .unwrap_or(seg.start_index..seg.start_index + len);
            entries.push((
                KbEntry {
                    id: entries.len() as u64,
                    embedding: emb.iter().map(|v| *v as f32 as f64).collect(),
                    source: SourceRef {
                        node_id: seg.node_id,
                        node_index: seg.node_index,
                        segment_start: seg.start_index,
                        segment_len: len,
                        span,
                    },
                },
                hash.clone(),
            ));
        }
        log::info!("embedded {} source segments", entries.len());
        Self::from_entries(source.clone(), entries, lambda)
    }

    /// Assembles a knowledge base from pre-computed entries, each tagged with
    /// the hash of the encoder that produced it.
    pub fn from_entries(source: CityDataset, tagged: Vec<(KbEntry, String)>, lambda: f64) -> Result<Self> {
        if tagged.is_empty() {
            bail!(Data, "knowledge base needs at least one entry");
        }
        let hash = tagged[0].1.clone();
        if let Some((e, h)) = tagged.iter().find(|(_, h)| *h != hash) {
            bail!(
                Validation,
                "entry {} was embedded by encoder {} but entry {} by {}; rebuild with a single checkpoint",
                e.id,
                h,
                tagged[0].0.id,
                hash
            );
        }
        let entries: Vec<KbEntry> = tagged.into_iter().map(|(e, _)| e).collect();
        Self::assemble(source, entries, hash, lambda)
    }

    fn assemble(source: CityDataset, entries: Vec<KbEntry>, encoder_hash: String, lambda: f64) -> Result<Self> {
        let dim = entries[0].embedding.len();
        let mut seen = alloc::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                bail!(Validation, "duplicate knowledge base id {}", e.id);
            }
            if e.embedding.len() != dim {
                bail!(Shape, "entry {} has {} embedding values, expected {}", e.id, e.embedding.len(), dim);
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                bail!(Numeric, "entry {} has a non-finite embedding", e.id);
            }
            let node = source.nodes.get(e.source.node_index);
            let ok = node.is_some_and(|n| {
                n.node_id == e.source.node_id
                    && e.source.span.end <= n.values.len()
                    && n.window(e.source.segment_start..e.source.segment_start + e.source.segment_len).is_some()
            });
            if !ok {
                bail!(Data, "entry {} refers to source data that is missing", e.id);
            }
        }
        let rows: Vec<&[f64]> = entries.iter().map(|e| e.embedding.as_slice()).collect();
        let covariance = CovarianceSummary::estimate(&rows, dim, lambda)?;
        let whitened = entries.iter().map(|e| covariance.whiten(&e.embedding)).collect();
        Ok(Self {
            source,
            entries,
            encoder_hash,
            covariance,
            whitened,
            dim,
        })
    }

    /// Reassembles a persisted knowledge base; the covariance is re-estimated
    /// from the stored embeddings.
    pub fn restore(source: CityDataset, entries: Vec<KbEntry>, encoder_hash: String, lambda: f64) -> Result<Self> {
        if entries.is_empty() {
            bail!(Data, "knowledge base needs at least one entry");
        }
        Self::assemble(source, entries, encoder_hash, lambda)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u64) -> Option<&KbEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
            .or_else(|| self.entries.iter().find(|e| e.id == id))
    }

    pub fn source(&self) -> &CityDataset {
        &self.source
    }

    pub fn encoder_hash(&self) -> &str {
        &self.encoder_hash
    }

    pub fn covariance(&self) -> &CovarianceSummary {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Context text `T` of an entry.
    pub fn context(&self, entry: &KbEntry) -> &str {
        self.source.context(&entry.source.node_id)
    }

    /// Raw values of the embedded segment.
    pub fn segment_values(&self, entry: &KbEntry) -> Vec<f64> {
        let s = &entry.source;
        self.source.nodes[s.node_index]
            .window(s.segment_start..s.segment_start + s.segment_len)
            .expect("validated at build")
    }

    /// The long-term source sequence `S` of an entry.
    pub fn long_term(&self, entry: &KbEntry) -> Vec<f64> {
        let s = &entry.source;
        self.source.nodes[s.node_index].window(s.span.clone()).expect("span is gap free")
    }

    /// Timestamp of step `index` of the source grid.
    pub fn source_time(&self, index: usize) -> DateTime<Utc> {
        self.source.timestamp(index)
    }

    /// Scores of every entry against a flattened query embedding, in entry order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            bail!(Shape, "query has {} values but the knowledge base stores {}", query.len(), self.dim);
        }
        let wq = self.covariance.whiten(query);
        Ok(self
            .entries
            .iter()
            .zip(&self.whitened)
            .map(|(e, w)| -0.5 * (dist(query, &e.embedding) + dist(&wq, w)))
            .collect())
    }

    /// Exact top-`k` ids and scores, best first, ties by ascending id.
    pub fn top_k_ids(&self, query: &[f64], k: usize) -> Result<Vec<(u64, f64)>> {
        if k == 0 {
            bail!(Config, "K must be at least 1");
        }
        let scores = self.scores(query)?;
        let mut ranked: Vec<(f64, u64)> = scores.into_iter().zip(self.entries.iter().map(|e| e.id)).collect();
        let k = k.min(ranked.len());
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
            ranked.truncate(k);
        }
        ranked.sort_by(|a, b| rank_order(*a, *b));
        Ok(ranked.into_iter().map(|(s, id)| (id, s)).collect())
    }

    /// Full retrieval result for a query embedding; weights are computed on
    /// z-normalized raw slices against `target_slice` with the hits as the
    /// candidate set.
    pub fn top_k(&self, query: &[f64], target_slice: &[f64], k: usize) -> Result<RetrievalResult> {
        let ids = self.top_k_ids(query, k)?;
        let entries: Vec<&KbEntry> = ids.iter().map(|(id, _)| self.entry(*id).expect("ranked id")).collect();
        let slices: Vec<Vec<f64>> = entries.iter().map(|e| self.segment_values(e)).collect();
        let weights = if slices.iter().all(|s| s.len() == target_slice.len()) {
            similarity_weights(&slices, target_slice)?
        } else {
            alloc::vec![1.0; slices.len()]
        };
        Ok(RetrievalResult {
            k,
            encoder_hash: self.encoder_hash.clone(),
            hits: ids
                .iter()
                .zip(entries)
                .zip(weights)
                .map(|((&(id, score), e), weight)| RetrievalHit {
                    id,
                    score,
                    weight,
                    source: e.source.clone(),
                    context: String::from(self.context(e)),
                })
                .collect(),
        })
    }
}

/// Embeds the target slice with the frozen encoder and scans the knowledge base.
pub struct EmbeddingRetriever<'a> {
    pub encoder: &'a Encoder,
    pub kb: &'a KnowledgeBase,
}

impl<'a> EmbeddingRetriever<'a> {
    pub fn new(encoder: &'a Encoder, kb: &'a KnowledgeBase) -> Result<Self> {
        let hash = encoder.fingerprint();
        if hash != kb.encoder_hash() {
            bail!(
                Validation,
                "knowledge base was built with encoder {} but the loaded encoder is {}",
                kb.encoder_hash(),
                hash
            );
        }
        Ok(Self { encoder, kb })
    }
}

impl Retriever for EmbeddingRetriever<'_> {
    fn retrieve(&self, target_slice: &[f64], k: usize) -> Result<RetrievalResult> {
        let q: Vec<f64> = self
            .encoder
            .embed_values(target_slice)?
            .iter()
            .map(|v| *v as f32 as f64)
            .collect();
        self.kb.top_k(&q, target_slice, k)
    }

    fn knowledge_base(&self) -> &KnowledgeBase {
        self.kb
    }
}
