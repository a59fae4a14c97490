use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest, DEFAULT_CLUSTERS, MAX_ITERATIONS};
use crate::data::CityDataset;
use crate::encoder::Encoder;
use crate::error::{bail, Result};
use crate::forecast::{PredictionTokens, WindowSet};
use crate::kb::{similarity, KnowledgeBase, RetrievalHit, RetrievalResult, Retriever};
use crate::nn::Tensor;
use crate::reasoning::{
    build_prompt, run_inference, Incident, PromptMode, PromptOptions, Reasoner, ReasoningCase, RetrievedSource,
    StubReasoner, TimedSequence, DEFAULT_ALPHA,
};

/// Which module is swapped out, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    RandomCentroid,
    WeakReasoner,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RandomCentroid => "random_centroid",
            Variant::WeakReasoner => "weak_reasoner",
        }
    }
}

/// Settings of the retrieval and reasoning stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Retrieved entries per query.
    pub k: usize,
    /// Stub blend weight of the base tokens.
    pub alpha: f64,
    pub variant: Variant,
    /// k-means clusters of the random-centroid variant.
    pub clusters: usize,
    pub ablation_seed: u64,
    pub prompt: PromptOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: DEFAULT_ALPHA,
            variant: Variant::Full,
            clusters: DEFAULT_CLUSTERS,
            ablation_seed: 0,
            prompt: PromptOptions::default(),
        }
    }
}

impl PipelineConfig {
    /// The same configuration with only the variant replaced.
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Names of the fields that differ.
    pub fn diff(&self, other: &Self) -> Vec<&'static str> {
        let mut d = Vec::new();
        if self.k != other.k {
            d.push("k");
        }
        if self.alpha.to_bits() != other.alpha.to_bits() {
            d.push("alpha");
        }
        if self.variant != other.variant {
            d.push("variant");
        }
        if self.clusters != other.clusters {
            d.push("clusters");
        }
        if self.ablation_seed != other.ablation_seed {
            d.push("ablation_seed");
        }
        if self.prompt != other.prompt {
            d.push("prompt");
        }
        d
    }

    /// The offline reasoner for this variant.
    pub fn stub_reasoner(&self) -> StubReasoner {
        match self.variant {
            Variant::WeakReasoner => StubReasoner { alpha: 1.0 },
            _ => StubReasoner { alpha: self.alpha },
        }
    }
}

/// Replaces top-K search with a lookup of one representative entry per
/// k-means cluster of the knowledge-base embeddings.
pub struct RandomCentroidRetriever<'a> {
    encoder: &'a Encoder,
    kb: &'a KnowledgeBase,
    centroids: Vec<Vec<f64>>,
    representatives: Vec<u64>,
}

impl<'a> RandomCentroidRetriever<'a> {
    pub fn new(encoder: &'a Encoder, kb: &'a KnowledgeBase, clusters: usize, seed: u64) -> Result<Self> {
        if clusters > kb.len() {
            bail!(Config, "k-means with k={clusters} needs at least that many entries, the knowledge base has {}", kb.len());
        }
        let rows: Vec<&[f64]> = kb.entries().iter().map(|e| e.embedding.as_slice()).collect();
        let km = kmeans(&rows, clusters, MAX_ITERATIONS, seed)?;
        let mut rng = crate::nn::seeded(seed ^ 0x7e9);
        let mut representatives = Vec::with_capacity(clusters);
        for c in 0..clusters {
            let members: Vec<usize> = (0..rows.len()).filter(|i| km.assignment[*i] == c).collect();
            let idx = match members.choose(&mut rng) {
                Some(i) => *i,
                None => {
                    let mut best = 0;
                    for i in 1..rows.len() {
                        if dist2(rows[i], &km.centroids[c]) < dist2(rows[best], &km.centroids[c]) {
                            best = i;
                        }
                    }
                    best
                }
            };
            representatives.push(kb.entries()[idx].id);
        }
        Ok(Self {
            encoder,
            kb,
            centroids: km.centroids,
            representatives,
        })
    }

    pub fn representatives(&self) -> &[u64] {
        &self.representatives
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Retriever for RandomCentroidRetriever<'_> {
    fn retrieve(&self, target_slice: &[f64], _k: usize) -> Result<RetrievalResult> {
        let q: Vec<f64> = self.encoder.embed_values(target_slice)?.iter().map(|v| *v as f32 as f64).collect();
        let id = self.representatives[nearest(&self.centroids, &q)];
        let e = self.kb.entry(id).expect("representative is stored");
        Ok(RetrievalResult {
            k: 1,
            encoder_hash: String::from(self.kb.encoder_hash()),
            hits: alloc::vec![RetrievalHit {
                id,
                score: similarity(&q, &e.embedding, self.kb.covariance())?,
                weight: 1.0,
                source: e.source.clone(),
                context: String::from(self.kb.context(e)),
            }],
        })
    }

    fn knowledge_base(&self) -> &KnowledgeBase {
        self.kb
    }
}

/// Turns a retrieval result into reasoning input. The top hit carries its
/// full long-term sequence; the others carry only their matched segment.
pub fn build_case(
    kb: &KnowledgeBase,
    result: &RetrievalResult,
    target: &CityDataset,
    node: usize,
    input: Range<usize>,
    tokens: &[f64],
    producer: &str,
    truth: Option<Vec<f64>>,
) -> Result<ReasoningCase> {
    let series = &target.nodes[node];
    let Some(history) = series.window(input.clone()) else {
        bail!(Data, "history of {} at step {} has gaps", series.node_id, input.start);
    };
    let src = kb.source();
    let retrieved = result
        .hits
        .iter()
        .enumerate()
        .map(|(rank, h)| {
            let e = kb.entry(h.id).expect("hit is stored");
            let (range, offset) = if rank == 0 {
                (h.source.span.clone(), h.source.segment_start - h.source.span.start)
            } else {
                (h.source.segment_start..h.source.segment_start + h.source.segment_len, 0)
            };
            RetrievedSource {
                id: h.id,
                score: h.score,
                weight: h.weight,
                node_id: h.source.node_id.clone(),
                context: h.context.clone(),
                sequence: TimedSequence {
                    start: src.timestamp(range.start),
                    frequency: src.frequency,
                    values: if rank == 0 { kb.long_term(e) } else { kb.segment_values(e) },
                },
                segment_offset: offset,
                segment_len: h.source.segment_len,
            }
        })
        .collect();
    Ok(ReasoningCase {
        node_id: series.node_id.clone(),
        capacity: series.capacity as f64,
        target_context: String::from(target.context(&series.node_id)),
        history: TimedSequence {
            start: target.timestamp(input.start),
            frequency: target.frequency,
            values: history,
        },
        tokens: tokens.to_vec(),
        producer: String::from(producer),
        retrieved,
        ground_truth: truth,
    })
}

/// Forecasts of one variant over a split.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRun {
    /// `samples x nodes x L_pred`.
    pub predictions: Tensor,
    pub incidents: Vec<Incident>,
}

/// Retrieves, prompts and reasons over every (window, node) pair.
pub fn run_forecasts(
    target: &CityDataset,
    windows: &WindowSet,
    tokens: &PredictionTokens,
    retriever: &dyn Retriever,
    reasoner: &dyn Reasoner,
    cfg: &PipelineConfig,
) -> Result<ForecastRun> {
    tokens.validate_against(target, windows)?;
    let (s, n, l) = tokens.dims();
    let kb = retriever.knowledge_base();
    let mut out = Vec::with_capacity(s * n * l);
    let mut incidents = Vec::new();
    for i in 0..s {
        let input = windows.input_range(i);
        for node in 0..n {
            let hist = target.nodes[node].window(input.clone()).expect("windows are gap free");
            let result = retriever.retrieve(&hist, cfg.k)?;
            let case = build_case(kb, &result, target, node, input.clone(), tokens.token(i, node), &tokens.producer, None)?;
            let prompt = build_prompt(&case.slots(&cfg.prompt, PromptMode::Inference), PromptMode::Inference)?;
            let outcome = run_inference(reasoner, &prompt.text, &case)?;
            out.extend(outcome.forecast);
            incidents.extend(outcome.incident);
        }
    }
    Ok(ForecastRun {
        predictions: Tensor::from_vec(&[s, n, l], out)?,
        incidents,
    })
}
