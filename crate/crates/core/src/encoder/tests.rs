use alloc::vec;
use alloc::vec::Vec;

use chrono::DateTime;
use proptest::prelude::*;

use super::*;
use crate::data::TimeSeriesBatch;
use crate::nn::{grad_check, Module, Tensor};

fn batch(values: Vec<f64>, b: usize, n: usize, l: usize) -> TimeSeriesBatch {
    let t0 = DateTime::from_timestamp(0, 0).unwrap();
    TimeSeriesBatch::new(
        Tensor::from_vec(&[b, n, l], values).unwrap(),
        vec![t0; b],
        (0..n).map(|i| alloc::format!("n{i}")).collect(),
    )
    .unwrap()
}

fn small_config() -> EncoderConfig {
    EncoderConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        seed: 3,
        ..EncoderConfig::default()
    }
}

fn wave(len: usize, phase: f64, level: f64) -> Vec<f64> {
    (0..len).map(|i| level + 40.0 * libm::sin(0.5 * i as f64 + phase)).collect()
}

proptest! {
    #[test]
    fn patchify_round_trips(b in 1usize..3, n in 1usize..4, lp in 1usize..6, p in 1usize..5, seed in 0u64..1000) {
        let l = lp * p;
        let vals: Vec<f64> = (0..b * n * l).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f64).collect();
        let bt = batch(vals.clone(), b, n, l);
        let g = patchify(&bt, p).unwrap();
        prop_assert_eq!(g.dims(), (b, n, lp, p));
        let back = unpatchify(&g).unwrap();
        prop_assert_eq!(back.data(), &vals[..]);
    }

    #[test]
    fn instance_norm_is_affine_invariant(a in 0.1f64..50.0, c in -100.0f64..100.0, seed in 0u64..500) {
        let vals: Vec<f64> = (0..2 * 4 * 8).map(|i| libm::sin(i as f64 * 1.3 + seed as f64)).collect();
        let g = PatchGrid::new(Tensor::from_vec(&[1, 2, 4, 8], vals.clone()).unwrap()).unwrap();
        let h = PatchGrid::new(Tensor::from_vec(&[1, 2, 4, 8], vals.iter().map(|v| a * v + c).collect()).unwrap()).unwrap();
        let eps = 1e-9;
        let x = instance_normalize(&g, eps);
        let y = instance_normalize(&h, eps);
        for (u, v) in x.tensor.data().iter().zip(y.tensor.data()) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn patchify_rejects_indivisible_length() {
    let err = patchify(&batch(vec![0.0; 10], 1, 1, 10), 3).unwrap_err();
    assert!(alloc::format!("{err}").contains("p=3"));
}

#[test]
fn instance_norm_moments() {
    let vals: Vec<f64> = (0..3 * 4 * 8).map(|i| (i * i % 17) as f64).collect();
    let g = PatchGrid::new(Tensor::from_vec(&[1, 3, 4, 8], vals).unwrap()).unwrap();
    let eps = 1e-5;
    let out = instance_normalize(&g, eps);
    for n in 0..3 {
        let (m, s) = crate::math::mean_std(out.instance(0, n));
        let (_, raw_s) = crate::math::mean_std(g.instance(0, n));
        assert!(m.abs() < 1e-12);
        assert!((s - raw_s / (raw_s + eps)).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-4);
    }
}

#[test]
fn cnn_preserves_grid_shape() {
    let mut rng = crate::nn::seeded(1);
    let cnn = SpatialCnn::new(&mut rng);
    let vals: Vec<f64> = (0..2 * 3 * 4 * 8).map(|i| libm::cos(i as f64)).collect();
    let g = PatchGrid::new(Tensor::from_vec(&[2, 3, 4, 8], vals).unwrap()).unwrap();
    let out = cnn.forward_grid(&g).unwrap();
    assert_eq!(out.dims(), (2, 3, 4, 8));
    let (_, cache) = cnn.forward(&Tensor::from_vec(&[1, 4, 8], g.instance(1, 2).to_vec()).unwrap()).unwrap();
    assert_eq!(cache.pre1.shape(), &[CNN_CHANNELS, 4, 8]);
    assert_eq!(cache.pre2.shape(), &[CNN_CHANNELS, 4, 8]);
}

#[test]
fn cnn_zero_input_gives_bias_only_output() {
    let mut rng = crate::nn::seeded(2);
    let mut cnn = SpatialCnn::new(&mut rng);
    let zero = PatchGrid::new(Tensor::zeros(&[1, 2, 4, 8])).unwrap();
    let out = cnn.forward_grid(&zero).unwrap();
    assert!(out.tensor.data().iter().all(|v| *v == 0.0));
    // With a positive first-layer bias and 1x1 tail the interior of the grid
    // is a single constant.
    cnn.conv1.bias.value.fill(0.5);
    cnn.conv3.bias.value.fill(0.25);
    let out = cnn.forward_grid(&zero).unwrap();
    let a = out.instance(0, 0);
    let b = out.instance(0, 1);
    assert_eq!(a, b);
    assert!(out.tensor.data().iter().all(|v| v.is_finite()));
    let interior = [a[8 + 1], a[8 + 2], a[16 + 5], a[16 + 6]];
    assert!(interior.iter().all(|v| (v - interior[0]).abs() < 1e-12));
}

#[test]
fn masked_count_is_clamped() {
    let mut c = EncoderConfig::default();
    assert_eq!(c.masked_count(), 3);
    c.mask_ratio = 0.01;
    assert_eq!(c.masked_count(), 1);
    c.mask_ratio = 0.99;
    assert_eq!(c.masked_count(), 3);
}

#[test]
fn masked_loss_ignores_visible_positions() {
    let mask = MaskPlan::from_indices(4, &[1, 3]);
    let target: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let mut recon = target.clone();
    recon[4] += 2.0; // masked patch 1
    let (l0, g) = masked_l1_loss(&recon, &target, &mask, 3);
    assert!((l0 - 2.0 / 6.0).abs() < 1e-15);
    for (i, gi) in g.iter().enumerate() {
        if !(3..6).contains(&i) && !(9..12).contains(&i) {
            assert_eq!(*gi, 0.0);
        }
    }
    for i in [0, 1, 2, 6, 7, 8] {
        recon[i] += 100.0;
    }
    let (l1, _) = masked_l1_loss(&recon, &target, &mask, 3);
    assert_eq!(l0, l1);
}

#[test]
fn encoder_never_sees_masked_values() {
    let mut mae = MaskedAutoencoder::new(small_config()).unwrap();
    let mask = MaskPlan::from_indices(4, &[0, 2, 3]);
    let seg = wave(12, 0.0, 100.0);
    let vis = mask.visible();
    let cfg = mae.encoder.config().clone();
    let x = standardize_visible(&seg, &vis, 3, cfg.epsilon);
    let (a, _) = mae.encoder.forward_instance(&x, &vis).unwrap();
    let mut other = seg.clone();
    for i in [0, 1, 2, 6, 7, 8, 9, 10, 11] {
        other[i] = -5000.0 + i as f64;
    }
    let y = standardize_visible(&other, &vis, 3, cfg.epsilon);
    let (b, _) = mae.encoder.forward_instance(&y, &vis).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 8);
    // The loss does change since masked targets moved.
    let l0 = mae.instance_loss(&seg, &mask, false, 1.0).unwrap();
    let l1 = mae.instance_loss(&other, &mask, false, 1.0).unwrap();
    assert_ne!(l0, l1);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut mae = MaskedAutoencoder::new(small_config()).unwrap();
    // B = 2 samples of N = 2 nodes, L = 12, p = 3.
    let segs: Vec<Vec<f64>> = (0..4).map(|k| wave(12, k as f64 * 0.7, 50.0 + 10.0 * k as f64)).collect();
    let masks: Vec<MaskPlan> = [[0usize, 1, 2], [1, 2, 3], [0, 2, 3], [0, 1, 3]]
        .iter()
        .map(|m| MaskPlan::from_indices(4, m))
        .collect();
    let err = grad_check(
        &mut mae,
        |m, with_grad| {
            let mut total = 0.0;
            for (s, k) in segs.iter().zip(&masks) {
                total += m.instance_loss(s, k, with_grad, 0.25)? * 0.25;
            }
            Ok(total)
        },
        60,
        9,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn registry_is_consistent() {
    let mae = MaskedAutoencoder::new(EncoderConfig::default()).unwrap();
    mae.check_registry().unwrap();
    assert!(mae.encoder.param_names().iter().any(|n| n.starts_with("cnn.conv2")));
}

#[test]
fn pretraining_reduces_loss_and_is_deterministic() {
    let cfg = EncoderConfig {
        epochs: 8,
        batch_size: 8,
        learning_rate: 3e-3,
        ..small_config()
    };
    let segs: Vec<Vec<f64>> = (0..64).map(|k| wave(12, k as f64 * 0.37, 100.0 + k as f64)).collect();
    let run = || {
        let mut mae = MaskedAutoencoder::new(cfg.clone()).unwrap();
        let rep = pretrain(&mut mae, &segs, &mut |_, _| {}).unwrap();
        (rep, mae.encoder.fingerprint())
    };
    let (a, fa) = run();
    let (b, fb) = run();
    assert_eq!(a, b);
    assert_eq!(fa, fb);
    assert_eq!(a.epoch_losses.len(), 8);
    assert!(a.epoch_losses.last().unwrap() < a.epoch_losses.first().unwrap(), "{:?}", a.epoch_losses);
    assert_eq!(a.optimizer_steps, 64);
}

#[test]
fn embedding_shape_and_errors() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let e = enc.embed(&wave(12, 0.0, 10.0)).unwrap();
    assert_eq!((e.rows, e.cols, e.values.len()), (4, 32, 128));
    assert_eq!(e.encoder_hash, enc.fingerprint());
    let err = enc.embed(&[0.0; 10]).unwrap_err();
    let msg = alloc::format!("{err}");
    assert!(msg.contains("L=12") && msg.contains("p=3"), "{msg}");
    // Affine shifts of the input give the same embedding.
    let shifted: Vec<f64> = wave(12, 0.0, 10.0).iter().map(|v| 3.0 * v + 250.0).collect();
    let f = enc.embed(&shifted).unwrap();
    for (u, v) in e.values.iter().zip(&f.values) {
        assert!((u - v).abs() < 1e-5);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let c = EncoderConfig {
        segment_len: 10,
        ..EncoderConfig::default()
    };
    assert!(Encoder::new(c).is_err());
    let c = EncoderConfig {
        heads: 5,
        ..EncoderConfig::default()
    };
    assert!(Encoder::new(c).is_err());
}

#[test]
fn empty_source_is_a_data_error() {
    let mut mae = MaskedAutoencoder::new(small_config()).unwrap();
    let none: Vec<Vec<f64>> = Vec::new();
    assert!(matches!(pretrain(&mut mae, &none, &mut |_, _| {}), Err(crate::Error::Data(_))));
}
