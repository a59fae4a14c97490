use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::data::{generate_derived_target, generate_synthetic_city, DerivedTarget, SyntheticProfile};
use crate::encoder::{Encoder, EncoderConfig};
use crate::forecast::{enumerate_windows, generate_tokens, horizon_truth, SeasonalNaive};
use crate::kb::{EmbeddingRetriever, KnowledgeBase, Retriever, DEFAULT_SHRINKAGE};
use crate::nn::Tensor;
use crate::reasoning::StubReasoner;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn metrics_hand_example() {
    let m = compute_metrics(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
    assert!(close(m.mae, 1.5, 1e-12));
    assert!(close(m.rmse, 2.5f64.sqrt(), 1e-12));
    assert!(close(m.mape, 100.0, 1e-12));
    let m = compute_metrics(&[3.0, 1.0], &[2.0, 4.0]).unwrap();
    assert!(close(m.mape, 100.0 * (0.5 + 0.75) / 2.0, 1e-12));
}

#[test]
fn mape_zero_guard() {
    let m = compute_metrics(&[0.5, 3.0], &[0.0, 0.0]).unwrap();
    assert!(m.mape.is_finite());
    assert!(close(m.mape, 100.0 * (0.5 + 3.0) / 2.0, 1e-12));
}

#[test]
fn metric_errors() {
    assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    assert!(compute_metrics(&[], &[]).is_err());
    assert!(compute_metrics(&[1.0], &[f64::NAN]).is_err());
}

#[test]
fn perfect_predictor_table() {
    let t = Tensor::from_vec(&[2, 3, 12], (0..72).map(|i| (i * 7 % 50) as f64).collect()).unwrap();
    let r = HorizonReport::compute("perfect", "d", &t, &t).unwrap();
    assert_eq!(r.steps.len(), 12);
    assert!(r.steps.iter().all(|m| m.mae == 0.0 && m.rmse == 0.0 && m.mape == 0.0));
    let md = markdown_table(&[r.clone()]);
    assert!(md.contains("| 15 mins MAE |"));
    assert!(md.contains("180 mins MAPE"));
    assert_eq!(md.lines().count(), 3);
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.lines().nth(12).unwrap().starts_with("perfect,d,12,180,"));
    let both = reports_csv(&[r.clone(), r]);
    assert_eq!(both.lines().count(), 25);
}

#[test]
fn horizon_steps_are_strided_correctly() {
    // pred = truth + h at step h, so MAE at step h is h.
    let truth = Tensor::from_vec(&[4, 2, 3], vec![10.0; 24]).unwrap();
    let pred = Tensor::from_vec(&[4, 2, 3], (0..24).map(|i| 10.0 + (i % 3) as f64).collect()).unwrap();
    let r = HorizonReport::compute("x", "d", &pred, &truth).unwrap();
    for h in 0..3 {
        assert!(close(r.steps[h].mae, h as f64, 1e-12));
    }
    assert!(close(r.mean_mae(), 1.0, 1e-12));
}

#[test]
fn persistence_error_grows_with_horizon_on_random_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = 0.0f64;
    let series: Vec<f64> = (0..3000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x += z;
            x
        })
        .collect();
    let (l_in, l) = (12, 12);
    let n = series.len() + 1 - l_in - l;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in 0..n {
        let last = series[s + l_in - 1];
        for h in 0..l {
            pred.push(last);
            truth.push(series[s + l_in + h]);
        }
    }
    let p = Tensor::from_vec(&[n, 1, l], pred).unwrap();
    let t = Tensor::from_vec(&[n, 1, l], truth).unwrap();
    let r = HorizonReport::compute("persistence", "rw", &p, &t).unwrap();
    for w in r.steps.windows(2) {
        assert!(w[1].mae > w[0].mae, "{:?}", r.steps);
    }
}

#[test]
fn kmeans_single_cluster_is_the_mean() {
    let rows: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let km = kmeans(&refs, 1, MAX_ITERATIONS, 0).unwrap();
    assert!(close(km.centroids[0][0], 1.0, 1e-12));
    assert!(close(km.centroids[0][1], 1.0, 1e-12));
    assert_eq!(km.assignment, vec![0, 0, 0]);
}

#[test]
fn kmeans_separates_blobs_and_rejects_large_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let c = (i % 3) as f64 * 10.0;
            vec![c + rng.random_range(-0.5..0.5), -c + rng.random_range(-0.5..0.5)]
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let km = kmeans(&refs, 3, MAX_ITERATIONS, 9).unwrap();
    for i in 0..60 {
        assert_eq!(km.assignment[i], km.assignment[i % 3]);
    }
    let mut labels = km.assignment[..3].to_vec();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), 3);
    assert_eq!(kmeans(&refs, 3, MAX_ITERATIONS, 9).unwrap(), km);
    assert!(matches!(kmeans(&refs, 61, 10, 0), Err(crate::Error::Config(_))));
}

#[test]
fn config_diff_is_single_field() {
    let a = PipelineConfig::default();
    for v in [Variant::RandomCentroid, Variant::WeakReasoner] {
        assert_eq!(a.diff(&a.with_variant(v)), vec!["variant"]);
    }
    let b = PipelineConfig { k: 3, ..a.clone() };
    assert_eq!(a.diff(&b), vec!["k"]);
    assert_eq!(a.with_variant(Variant::WeakReasoner).stub_reasoner(), StubReasoner { alpha: 1.0 });
}

struct Fixture {
    encoder: Encoder,
    kb: KnowledgeBase,
    target: crate::data::CityDataset,
}

fn fixture() -> Fixture {
    let p = SyntheticProfile::default();
    let source = generate_synthetic_city(5, 3, 3, &p).unwrap();
    let encoder = Encoder::new(EncoderConfig {
        embed_dim: 8,
        heads: 2,
        layers: 1,
        ..EncoderConfig::default()
    })
    .unwrap();
    let kb = KnowledgeBase::build(&encoder, &source, 4, DEFAULT_SHRINKAGE).unwrap();
    let target = generate_derived_target(
        5,
        &p,
        &[DerivedTarget {
            source_node: 1,
            scale: 0.6,
            offset: 15.0,
            capacity: 400,
            node_id: String::from("T0"),
            context: String::from("target node"),
        }],
        "tgt",
        p.start + chrono::TimeDelta::try_days(14).unwrap(),
        2,
    )
    .unwrap();
    Fixture { encoder, kb, target }
}

#[test]
fn pipeline_weak_reasoner_reproduces_tokens() {
    let f = fixture();
    let windows = enumerate_windows(&f.target, 100..140, 12, 12);
    let tokens = generate_tokens(&f.target, &windows, 0, &SeasonalNaive { period: 96 }).unwrap();
    let truth = horizon_truth(&f.target, &windows).unwrap();
    let retr = EmbeddingRetriever::new(&f.encoder, &f.kb).unwrap();
    let cfg = PipelineConfig::default();

    let weak = cfg.with_variant(Variant::WeakReasoner);
    let run = run_forecasts(&f.target, &windows, &tokens, &retr, &weak.stub_reasoner(), &weak).unwrap();
    assert!(run.incidents.is_empty());
    assert_eq!(run.predictions, tokens.values);
    let base = HorizonReport::compute("base", "t", &tokens.values, &truth).unwrap();
    let rw = HorizonReport::compute("weak", "t", &run.predictions, &truth).unwrap();
    assert_eq!(base.steps, rw.steps);

    let full = run_forecasts(&f.target, &windows, &tokens, &retr, &cfg.stub_reasoner(), &cfg).unwrap();
    assert_eq!(full.predictions.shape(), tokens.values.shape());
    assert!(full.predictions.data().iter().all(|v| (0.0..=400.0).contains(v)));
}

#[test]
fn random_centroid_retriever_is_seeded() {
    let f = fixture();
    let a = RandomCentroidRetriever::new(&f.encoder, &f.kb, 16, 7).unwrap();
    let b = RandomCentroidRetriever::new(&f.encoder, &f.kb, 16, 7).unwrap();
    assert_eq!(a.representatives(), b.representatives());
    assert_eq!(a.representatives().len(), 16);
    let q = f.kb.segment_values(&f.kb.entries()[10]);
    let r = a.retrieve(&q, 5).unwrap();
    assert_eq!(r.hits.len(), 1);
    assert!(a.representatives().contains(&r.hits[0].id));
    assert!(RandomCentroidRetriever::new(&f.encoder, &f.kb, f.kb.len() + 1, 0).is_err());
}

proptest! {
    #[test]
    fn metrics_are_nonnegative_and_rmse_dominates(v in proptest::collection::vec((0.0f64..500.0, 0.0f64..500.0), 1..40)) {
        let p: Vec<f64> = v.iter().map(|x| x.0).collect();
        let t: Vec<f64> = v.iter().map(|x| x.1).collect();
        let m = compute_metrics(&p, &t).unwrap();
        prop_assert!(m.mae >= 0.0 && m.mape >= 0.0);
        prop_assert!(m.rmse + 1e-9 >= m.mae);
    }
}
