//! One function per CLI subcommand. Each reads its inputs from the artifacts
//! directory, writes its outputs there, and records the resolved config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{TimeDelta, Timelike};
use rand::seq::index::sample;
use serde::Serialize;
use serde_json::json;
use strata_core::data::{
    chronological_split, generate_derived_target, generate_synthetic_city, split_ranges, CityDataset, SplitRanges,
};
use strata_core::encoder::{pretrain, DatasetSegments, Encoder, MaskedAutoencoder};
use strata_core::eval::{
    build_case, markdown_table, reports_csv, run_forecasts, HorizonReport, RandomCentroidRetriever, Variant,
};
use strata_core::forecast::{builtin, enumerate_windows, generate_tokens, horizon_truth, ForecasterSpec, PredictionTokens, WindowSet};
use strata_core::kb::{EmbeddingRetriever, Heatmap, KnowledgeBase, RetrievalResult, Retriever};
use strata_core::nn::Module;
use strata_core::reasoning::{
    build_prompt, build_sft_instance, stratified_sample, stub_teacher_response, PromptMode, Reasoner, SftInstance,
    TeacherResponse,
};

use crate::artifacts::Artifacts;
use crate::checkpoint::{load_encoder, save_encoder};
use crate::config::RunConfig;
use crate::dataset::{ingest_csv, load_dataset, read_context, save_dataset};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::kbfile::{load_kb, save_kb};
use crate::llm::{ChatClient, RemoteReasoner, ResponseCache};
use crate::sft::write_sft_jsonl;
use crate::tokens::{import_external_tokens, load_tokens, save_tokens, tokens_sha256};

const DATA_STEP: &str = "gen-synth` or `strata ingest";

/// A resolved configuration bound to its artifacts directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub cfg: RunConfig,
    pub art: Artifacts,
    pub config_hash: String,
}

impl Workspace {
    pub fn new(cfg: RunConfig) -> Self {
        let art = Artifacts::new(cfg.paths.artifacts.clone());
        let config_hash = cfg.hash();
        Self { cfg, art, config_hash }
    }

    fn record(&self, command: &str) -> Result<()> {
        let text = format!("# config_hash = \"{}\"\n{}", self.config_hash, self.cfg.to_toml());
        fsutil::write_atomic(&self.art.resolved_config(command), text.as_bytes())
    }

    fn stamp(&self, command: &str, inputs: BTreeMap<&str, String>) -> serde_json::Value {
        json!({ "command": command, "config_hash": self.config_hash, "inputs": inputs })
    }

    fn target(&self) -> Result<CityDataset> {
        load_dataset(&self.art.target(), DATA_STEP)
    }

    fn source(&self) -> Result<CityDataset> {
        load_dataset(&self.art.source(), DATA_STEP)
    }

    fn target_ranges(&self, target: &CityDataset) -> Result<SplitRanges> {
        Ok(split_ranges(target.len(), target.frequency, &self.cfg.split, true)?)
    }

    fn windows(&self, target: &CityDataset, range: std::ops::Range<usize>) -> WindowSet {
        enumerate_windows(target, range, self.cfg.windows.input_len, self.cfg.windows.pred_len)
    }

    /// Encoder and knowledge base, refusing a KB built by another encoder.
    fn retrieval_stack(&self) -> Result<(Encoder, KnowledgeBase)> {
        let enc = load_encoder(&self.art.encoder())?;
        let (kb, _) = load_kb(&self.art.kb())?;
        let current = enc.fingerprint();
        if kb.encoder_hash() != current {
            return Err(Error::Provenance {
                what: "knowledge base".into(),
                recorded: kb.encoder_hash().to_string(),
                current,
            });
        }
        Ok((enc, kb))
    }

    fn client(&self) -> ChatClient {
        ChatClient::new(self.cfg.llm.clone(), Some(ResponseCache::new(self.cfg.paths.cache.clone())))
    }
}

/// Writes the synthetic source city and its derived target city.
pub fn gen_synth(ws: &Workspace) -> Result<String> {
    let s = &ws.cfg.synth;
    let source = generate_synthetic_city(s.seed, s.source_nodes, s.source_days, &s.profile)?;
    let start = s.profile.start + TimeDelta::try_days(s.target_offset_days as i64).unwrap_or_default();
    let target = generate_derived_target(s.seed, &s.profile, &s.targets, &s.target_city, start, s.target_days)?;
    save_dataset(&ws.art.source(), &source)?;
    save_dataset(&ws.art.target(), &target)?;
    ws.record("gen-synth")?;
    Ok(format!(
        "source: {} nodes x {} steps; target: {} nodes x {} steps",
        source.nodes.len(),
        source.len(),
        target.nodes.len(),
        target.len()
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Source,
    Target,
}

pub fn ingest(ws: &Workspace, csv: &Path, context: Option<&Path>, role: Role, city: Option<&str>) -> Result<String> {
    let ctx = match context {
        Some(p) => read_context(p)?,
        None => BTreeMap::new(),
    };
    let name = city.map(str::to_string).unwrap_or_else(|| {
        csv.file_stem().map_or("city".into(), |s| s.to_string_lossy().into_owned())
    });
    let ing = &ws.cfg.ingest;
    let ds = ingest_csv(csv, &ing.schema, &name, ing.frequency, ing.max_gap, &ctx)?;
    let out = match role {
        Role::Source => ws.art.source(),
        Role::Target => ws.art.target(),
    };
    save_dataset(&out, &ds)?;
    ws.record("ingest")?;
    Ok(format!(
        "{}: {} nodes x {} steps, {} forward-filled gaps -> {}",
        name,
        ds.nodes.len(),
        ds.len(),
        ds.provenance.len(),
        out.display()
    ))
}

pub fn pretrain_encoder(ws: &Workspace) -> Result<String> {
    let source = ws.source()?;
    let split = chronological_split(&source, &ws.cfg.split, false)?;
    let segments = DatasetSegments::new(&[&split.train], ws.cfg.encoder.segment_len, ws.cfg.kb.pretrain_stride);
    let mut model = MaskedAutoencoder::new(ws.cfg.encoder.clone())?;
    let t0 = std::time::Instant::now();
    let report = pretrain(&mut model, &segments, &mut |_, _| {})?;
    save_encoder(&ws.art.encoder(), &model.encoder)?;
    let mut csv = String::from("epoch,train_loss,probe_loss\n");
    csv.push_str(&format!("0,,{:.8}\n", report.initial_probe_loss));
    for (i, (t, p)) in report.epoch_losses.iter().zip(&report.probe_losses).enumerate() {
        csv.push_str(&format!("{},{t:.8},{p:.8}\n", i + 1));
    }
    fsutil::write_atomic(&ws.art.encoder_loss(), csv.as_bytes())?;
    let train_json = serde_json::to_vec(&split.train).expect("dataset serializes");
    let fingerprint = model.encoder.fingerprint();
    fsutil::write_json(
        &ws.art.encoder_sidecar(),
        &json!({
            "config_hash": ws.config_hash,
            "encoder_hash": fingerprint,
            "config": ws.cfg.encoder,
            "seed": ws.cfg.encoder.seed,
            "training_data_sha256": fsutil::sha256_hex(&train_json),
            "training_segments": segments_len(&segments),
            "segments_per_epoch": report.segments_per_epoch,
            "optimizer_steps": report.optimizer_steps,
            "parameters": model.encoder.param_count(),
            "initial_probe_loss": report.initial_probe_loss,
            "loss_curve": "encoder_loss.csv",
        }),
    )?;
    ws.record("pretrain-encoder")?;
    let last = report.probe_losses.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "encoder {} trained in {:.1?}: probe loss {:.4} -> {:.4} over {} epochs",
        &fingerprint[..12],
        t0.elapsed(),
        report.initial_probe_loss,
        last,
        report.probe_losses.len()
    ))
}

fn segments_len(s: &DatasetSegments<'_>) -> usize {
    use strata_core::encoder::SegmentSource;
    s.len()
}

pub fn build_kb(ws: &Workspace) -> Result<String> {
    let enc = load_encoder(&ws.art.encoder())?;
    let source = ws.source()?;
    let kb = KnowledgeBase::build(&enc, &source, ws.cfg.kb.stride, ws.cfg.kb.lambda)?;
    save_kb(&ws.art.kb(), &kb, ws.cfg.kb.stride, ws.cfg.kb.lambda, &ws.config_hash)?;
    ws.record("build-kb")?;
    Ok(format!(
        "{} entries of dim {} ({:?} covariance) -> {}",
        kb.len(),
        kb.dim(),
        kb.covariance().mode,
        ws.art.kb().display()
    ))
}

/// One ranked hit in the `retrieve` output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitView {
    pub rank: usize,
    pub id: u64,
    pub score: f64,
    pub weight: f64,
    pub node_id: String,
    pub segment_start: usize,
    pub segment_time: String,
    pub span: [usize; 2],
    pub context: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrieveOutput {
    pub k: usize,
    pub encoder_hash: String,
    pub hits: Vec<HitView>,
}

fn view(kb: &KnowledgeBase, r: &RetrievalResult) -> RetrieveOutput {
    RetrieveOutput {
        k: r.k,
        encoder_hash: r.encoder_hash.clone(),
        hits: r
            .hits
            .iter()
            .enumerate()
            .map(|(i, h)| HitView {
                rank: i + 1,
                id: h.id,
                score: h.score,
                weight: h.weight,
                node_id: h.source.node_id.clone(),
                segment_start: h.source.segment_start,
                segment_time: kb.source_time(h.source.segment_start).to_rfc3339(),
                span: [h.source.span.start, h.source.span.end],
                context: h.context.clone(),
            })
            .collect(),
    }
}

/// Reads a query as a JSON array or as numbers separated by commas or
/// whitespace.
pub fn read_query(path: &Path) -> Result<Vec<f64>> {
    let text = fsutil::read_string(path)?;
    if let Ok(v) = serde_json::from_str::<Vec<f64>>(&text) {
        return Ok(v);
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("'{t}' is not a number"))))
        .collect()
}

pub fn retrieve(ws: &Workspace, query: &[f64], k: usize) -> Result<RetrieveOutput> {
    let (enc, kb) = ws.retrieval_stack()?;
    let r = EmbeddingRetriever::new(&enc, &kb)?.retrieve(query, k)?;
    Ok(view(&kb, &r))
}

pub fn gen_tokens(ws: &Workspace) -> Result<String> {
    let target = ws.target()?;
    let ranges = ws.target_ranges(&target)?;
    let train = ws.windows(&target, ranges.train.clone());
    let test = ws.windows(&target, ranges.test.clone());
    let target_sha = fsutil::files_sha256(&[&ws.art.target()])?;
    let (tr, te) = match &ws.cfg.forecaster {
        ForecasterSpec::ExternalFile { path } => {
            let dir = PathBuf::from(path);
            (
                import_external_tokens(&dir.join("train.json"), &target, &train)?,
                import_external_tokens(&dir.join("test.json"), &target, &test)?,
            )
        }
        spec => {
            let f = builtin(spec)?;
            (
                generate_tokens(&target, &train, ranges.observed_start(), f.as_ref())?,
                generate_tokens(&target, &test, ranges.observed_start(), f.as_ref())?,
            )
        }
    };
    for (path, tokens, windows) in [(ws.art.tokens_train(), &tr, &train), (ws.art.tokens_test(), &te, &test)] {
        let stamp = ws.stamp(
            "gen-tokens",
            BTreeMap::from([("target_sha256", target_sha.clone())]),
        );
        save_tokens(&path, tokens, json!({ "skipped_windows": windows.skipped, "stamp": stamp }))?;
    }
    ws.record("gen-tokens")?;
    Ok(format!(
        "{}: train {:?}, test {:?} (samples x nodes x steps)",
        tr.producer,
        tr.dims(),
        te.dims()
    ))
}

/// Loads tokens and checks them against the configured windows of the
/// target.
fn checked_tokens(path: &Path, target: &CityDataset, windows: &WindowSet) -> Result<PredictionTokens> {
    let (tokens, _) = load_tokens(path, "gen-tokens")?;
    tokens.validate_against(target, windows)?;
    Ok(tokens)
}

pub fn make_sft(ws: &Workspace) -> Result<String> {
    let target = ws.target()?;
    let ranges = ws.target_ranges(&target)?;
    let windows = ws.windows(&target, ranges.train.clone());
    let tokens = checked_tokens(&ws.art.tokens_train(), &target, &windows)?;
    let (enc, kb) = ws.retrieval_stack()?;
    let retriever = EmbeddingRetriever::new(&enc, &kb)?;
    let pc = &ws.cfg.pipeline;
    let mut cases = Vec::new();
    for node in 0..target.nodes.len() {
        let hours: Vec<u32> = (0..windows.len())
            .map(|i| target.timestamp(windows.horizon_range(i).start).hour())
            .collect();
        let picks = stratified_sample(&hours, ws.cfg.sft.per_node, ws.cfg.sft.seed.wrapping_add(node as u64));
        if picks.len() < ws.cfg.sft.per_node {
            log::warn!(
                "{}: only {} of {} training instances available",
                target.nodes[node].node_id,
                picks.len(),
                ws.cfg.sft.per_node
            );
        }
        for i in picks {
            let series = &target.nodes[node];
            let hist = series.window(windows.input_range(i)).expect("windows are gap free");
            let truth = series.window(windows.horizon_range(i)).expect("windows are gap free");
            let result = retriever.retrieve(&hist, pc.k)?;
            let case = build_case(&kb, &result, &target, node, windows.input_range(i), tokens.token(i, node), &tokens.producer, Some(truth))?;
            let prompt = build_prompt(&case.slots(&pc.prompt, PromptMode::Training), PromptMode::Training)?;
            cases.push((case, prompt.text));
        }
    }
    let responses: Vec<Result<String>> = if ws.cfg.llm.enabled {
        let client = ws.client();
        let prompts: Vec<String> = cases.iter().map(|c| c.1.clone()).collect();
        client.complete_many(&prompts)
    } else {
        cases
            .iter()
            .map(|(c, _)| {
                Ok(stub_teacher_response(
                    &c.target_context,
                    &c.history.values,
                    &c.tokens,
                    c.ground_truth.as_deref().unwrap_or(&[]),
                    c.capacity,
                ))
            })
            .collect()
    };
    let mut instances: Vec<SftInstance> = Vec::new();
    let mut rejected = 0;
    for ((case, _), raw) in cases.iter().zip(responses) {
        let truth = case.ground_truth.as_deref().unwrap_or(&[]);
        let resp = TeacherResponse::new(raw?, truth);
        if !resp.verdict.is_accept() {
            rejected += 1;
            log::warn!("teacher response for {} rejected: {:?}", case.node_id, resp.verdict);
            continue;
        }
        instances.push(build_sft_instance(case, &resp)?);
    }
    write_sft_jsonl(&ws.art.sft(), &instances)?;
    ws.record("make-sft")?;
    Ok(format!(
        "{} SFT instances ({} teacher responses rejected) -> {}",
        instances.len(),
        rejected,
        ws.art.sft().display()
    ))
}

pub fn forecast(ws: &Workspace, variant: Variant) -> Result<String> {
    let target = ws.target()?;
    let ranges = ws.target_ranges(&target)?;
    let windows = ws.windows(&target, ranges.test.clone());
    let tokens = checked_tokens(&ws.art.tokens_test(), &target, &windows)?;
    let (enc, kb) = ws.retrieval_stack()?;
    let pc = ws.cfg.pipeline.with_variant(variant);
    let retriever: Box<dyn Retriever + '_> = match variant {
        Variant::RandomCentroid => Box::new(RandomCentroidRetriever::new(&enc, &kb, pc.clusters, pc.ablation_seed)?),
        _ => Box::new(EmbeddingRetriever::new(&enc, &kb)?),
    };
    let client = ws.client();
    let remote = RemoteReasoner { client: &client };
    let stub = pc.stub_reasoner();
    let reasoner: &dyn Reasoner = if ws.cfg.llm.enabled && variant != Variant::WeakReasoner { &remote } else { &stub };
    let t0 = std::time::Instant::now();
    let run = run_forecasts(&target, &windows, &tokens, retriever.as_ref(), reasoner, &pc)?;
    let preds = PredictionTokens::new(
        run.predictions,
        tokens.window_starts.clone(),
        tokens.node_ids.clone(),
        tokens.input_len,
        reasoner.name(),
    )?;
    let stamp = ws.stamp(
        "forecast",
        BTreeMap::from([
            ("tokens_sha256", tokens_sha256(&ws.art.tokens_test())?),
            ("target_sha256", fsutil::files_sha256(&[&ws.art.target()])?),
            ("encoder_hash", enc.fingerprint()),
        ]),
    );
    let path = ws.art.forecast(variant);
    save_tokens(&path, &preds, json!({ "variant": variant, "stamp": stamp }))?;
    let mut lines = String::new();
    for inc in &run.incidents {
        lines.push_str(&serde_json::to_string(inc).expect("incident serializes"));
        lines.push('\n');
    }
    fsutil::write_atomic(&ws.art.incidents(variant), lines.as_bytes())?;
    ws.record("forecast")?;
    Ok(format!(
        "{}: {:?} forecasts by {} in {:.1?}, {} incidents -> {}",
        variant.name(),
        preds.dims(),
        preds.producer,
        t0.elapsed(),
        run.incidents.len(),
        path.display()
    ))
}

/// Reports of the base tokens and each variant, after checking that every
/// forecast was made from the current tokens and target data.
pub fn evaluate(ws: &Workspace, variants: &[Variant]) -> Result<Vec<HorizonReport>> {
    let reports = evaluate_into(ws, variants, "report")?;
    ws.record("evaluate")?;
    Ok(reports)
}

fn evaluate_into(ws: &Workspace, variants: &[Variant], stem: &str) -> Result<Vec<HorizonReport>> {
    let target = ws.target()?;
    let ranges = ws.target_ranges(&target)?;
    let windows = ws.windows(&target, ranges.test.clone());
    let tokens = checked_tokens(&ws.art.tokens_test(), &target, &windows)?;
    let truth = horizon_truth(&target, &windows)?;
    let current_tokens = tokens_sha256(&ws.art.tokens_test())?;
    let current_target = fsutil::files_sha256(&[&ws.art.target()])?;
    let mut chosen: Vec<Variant> = variants.to_vec();
    if chosen.is_empty() {
        chosen = [Variant::Full, Variant::RandomCentroid, Variant::WeakReasoner]
            .into_iter()
            .filter(|v| ws.art.forecast(*v).exists())
            .collect();
        if chosen.is_empty() {
            fsutil::require(&ws.art.forecast(Variant::Full), "forecast")?;
        }
    }
    let city = target.city_name.clone();
    let mut reports = vec![HorizonReport::compute("base", &city, &tokens.values, &truth)?];
    let mut hashes = BTreeMap::from([
        ("target".to_string(), current_target.clone()),
        ("tokens_test".to_string(), current_tokens.clone()),
    ]);
    for v in &chosen {
        let path = ws.art.forecast(*v);
        let (preds, m) = load_tokens(&path, "forecast")?;
        let inputs = &m.stamp["stamp"]["inputs"];
        for (key, current) in [("tokens_sha256", &current_tokens), ("target_sha256", &current_target)] {
            let recorded = inputs[key].as_str().unwrap_or("<none>");
            if recorded != current {
                return Err(Error::Provenance {
                    what: format!("forecast '{}' ({key})", v.name()),
                    recorded: recorded.to_string(),
                    current: current.clone(),
                });
            }
        }
        preds.validate_against(&target, &windows)?;
        hashes.insert(format!("forecast_{}", v.name()), tokens_sha256(&path)?);
        reports.push(HorizonReport::compute(v.name(), &city, &preds.values, &truth)?);
    }
    let dir = ws.art.reports();
    fsutil::write_atomic(&dir.join(format!("{stem}.csv")), reports_csv(&reports).as_bytes())?;
    fsutil::write_atomic(&dir.join(format!("{stem}.md")), markdown_table(&reports).as_bytes())?;
    for name in ["encoder", "kb"] {
        let p = match name {
            "encoder" => ws.art.encoder(),
            _ => ws.art.kb().join(crate::kbfile::MANIFEST),
        };
        if p.exists() {
            hashes.insert(name.to_string(), fsutil::files_sha256(&[&p])?);
        }
    }
    fsutil::write_json(
        &dir.join(format!("{stem}_manifest.json")),
        &json!({
            "config_hash": ws.config_hash,
            "variants": chosen,
            "seeds": {
                "synth": ws.cfg.synth.seed,
                "encoder": ws.cfg.encoder.seed,
                "sft": ws.cfg.sft.seed,
                "ablation": ws.cfg.pipeline.ablation_seed,
            },
            "artifacts": hashes,
            "config": ws.cfg,
        }),
    )?;
    Ok(reports)
}

/// Forecasts every variant and reports them side by side.
pub fn ablate(ws: &Workspace) -> Result<Vec<HorizonReport>> {
    let variants = [Variant::Full, Variant::RandomCentroid, Variant::WeakReasoner];
    for v in variants {
        let diff = ws.cfg.pipeline.with_variant(Variant::Full).diff(&ws.cfg.pipeline.with_variant(v));
        if v != Variant::Full && diff != ["variant"] {
            return Err(Error::Config(format!("variant {} changes {:?}", v.name(), diff)));
        }
        let summary = forecast(ws, v)?;
        log::info!("{summary}");
    }
    let reports = evaluate_into(ws, &variants, "ablation")?;
    ws.record("ablate")?;
    Ok(reports)
}

pub fn heatmap(ws: &Workspace, node: Option<&str>, start: Option<usize>, out: Option<&Path>) -> Result<(PathBuf, Heatmap)> {
    let target = ws.target()?;
    let source = ws.source()?;
    let len = ws.cfg.encoder.segment_len;
    let ti = match node {
        Some(id) => target
            .node_index(id)
            .ok_or_else(|| Error::Config(format!("target has no node {id}")))?,
        None => 0,
    };
    let start = match start {
        Some(s) => s,
        None => ws.target_ranges(&target)?.test.start,
    };
    let slice = target.nodes[ti]
        .window(start..start + len)
        .ok_or_else(|| Error::Config(format!("target slice {}..{} is missing or out of range", start, start + len)))?;
    let h = &ws.cfg.heatmap;
    let cols: Vec<usize> = if h.columns == 0 { (0..source.nodes.len()).collect() } else { (0..h.columns.min(source.nodes.len())).collect() };
    let candidates: Vec<usize> = (0..(source.len() + 1).saturating_sub(len))
        .filter(|&s| cols.iter().all(|&c| source.nodes[c].window(s..s + len).is_some()))
        .collect();
    if candidates.len() < h.rows || h.rows == 0 {
        return Err(Error::Config(format!("need {} gap-free source windows, found {}", h.rows, candidates.len())));
    }
    let mut rng = strata_core::nn::seeded(h.seed);
    let mut starts: Vec<usize> = sample(&mut rng, candidates.len(), h.rows).into_iter().map(|i| candidates[i]).collect();
    starts.sort_unstable();
    let grid: Vec<Vec<Vec<f64>>> = starts
        .iter()
        .map(|&s| cols.iter().map(|&c| source.nodes[c].window(s..s + len).unwrap()).collect())
        .collect();
    let map = Heatmap::compute(
        &slice,
        cols.iter().map(|&c| source.nodes[c].node_id.clone()).collect(),
        starts.iter().map(|&s| source.timestamp(s).to_rfc3339()).collect(),
        &grid,
    )?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| ws.art.heatmap());
    fsutil::write_atomic(&path, map.to_csv().as_bytes())?;
    ws.record("heatmap")?;
    Ok((path, map))
}
