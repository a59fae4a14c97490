use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{MaskPlan, MaskedAutoencoder};
use crate::data::{slice_segments, CityDataset};
use crate::error::{bail, Result};
use crate::nn::{Adam, Module};

/// Random access to pretraining segments.
pub trait SegmentSource {
    fn len(&self) -> usize;
    fn segment(&self, index: usize) -> Vec<f64>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every gap-free window of one or more datasets, stored as `(node, start)`
/// offsets rather than copied values.
pub struct DatasetSegments<'a> {
    datasets: Vec<&'a CityDataset>,
    index: Vec<(u32, u32, u32)>,
    segment_len: usize,
}

impl<'a> DatasetSegments<'a> {
    pub fn new(datasets: &[&'a CityDataset], segment_len: usize, stride: usize) -> Self {
        let mut index = Vec::new();
        for (di, ds) in datasets.iter().enumerate() {
            for s in slice_segments(ds, segment_len, stride) {
                index.push((di as u32, s.node_index as u32, s.start_index as u32));
            }
        }
        Self {
            datasets: datasets.to_vec(),
            index,
            segment_len,
        }
    }
}

impl SegmentSource for DatasetSegments<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn segment(&self, index: usize) -> Vec<f64> {
        let (d, n, s) = self.index[index];
        let s = s as usize;
        self.datasets[d as usize].nodes[n as usize]
            .window(s..s + self.segment_len)
            .expect("indexed windows are gap free")
    }
}

impl SegmentSource for Vec<Vec<f64>> {
    fn len(&self) -> usize {
        <[Vec<f64>]>::len(self)
    }
    fn segment(&self, index: usize) -> Vec<f64> {
        self[index].clone()
    }
}

/// Size of the fixed probe set scored before training and after each epoch.
pub const PROBE_SEGMENTS: usize = 512;

/// Loss curves of one pretraining run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Probe loss of the untrained model.
    pub initial_probe_loss: f64,
    /// Probe loss after each epoch.
    pub probe_losses: Vec<f64>,
    pub segments_per_epoch: usize,
    pub optimizer_steps: u64,
}

/// Trains `model` in place. The epoch loss is the mean per-segment masked L1
/// over every segment visited in that epoch, measured before each update.
pub fn pretrain<S: SegmentSource + ?Sized>(
    model: &mut MaskedAutoencoder,
    source: &S,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<PretrainReport> {
    let cfg = model.encoder.config().clone();
    if source.is_empty() {
        bail!(Data, "no gap-free segments of length {} to pretrain on", cfg.segment_len);
    }
    let mut rng = crate::nn::seeded(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(cfg.learning_rate);
    let (lp, masked) = (cfg.num_patches(), cfg.masked_count());
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut probe_rng = crate::nn::seeded(cfg.seed.wrapping_add(2));
    order.shuffle(&mut probe_rng);
    let probe: Vec<(Vec<f64>, MaskPlan)> = order
        .iter()
        .take(PROBE_SEGMENTS)
        .map(|&i| (source.segment(i), MaskPlan::random(lp, masked, &mut probe_rng)))
        .collect();
    let per_epoch = cfg.max_segments_per_epoch.map_or(order.len(), |m| m.min(order.len()));
    let mut report = PretrainReport {
        segments_per_epoch: per_epoch,
        ..PretrainReport::default()
    };
    report.initial_probe_loss = probe_loss(model, &probe)?;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in order[..per_epoch].chunks(cfg.batch_size).enumerate() {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let seg = source.segment(i);
                let mask = MaskPlan::random(lp, masked, &mut rng);
                let loss = model.instance_loss(&seg, &mask, true, scale)?;
                if !loss.is_finite() {
                    bail!(
                        Numeric,
                        "non-finite loss at epoch {epoch}, batch {bi}, segment {i} (values {:?})",
                        seg
                    );
                }
                total += loss;
            }
            let gn = model.grad_norm();
            if !gn.is_finite() {
                bail!(Numeric, "non-finite gradient norm at epoch {epoch}, batch {bi}");
            }
            opt.step(model);
        }
        let mean = total / per_epoch as f64;
        log::info!("pretrain epoch {} loss {:.6}", epoch + 1, mean);
        on_epoch(epoch, mean);
        report.epoch_losses.push(mean);
        report.probe_losses.push(probe_loss(model, &probe)?);
    }
    report.optimizer_steps = opt.steps_taken();
    model.round_params_to_f32();
    Ok(report)
}

fn probe_loss(model: &mut MaskedAutoencoder, probe: &[(Vec<f64>, MaskPlan)]) -> Result<f64> {
    let mut total = 0.0;
    for (seg, mask) in probe {
        total += model.instance_loss(seg, mask, false, 1.0)?;
    }
    Ok(total / probe.len().max(1) as f64)
}
