use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::patch::{instance_norm_rows, instance_norm_rows_backward, standardize, InstanceNormCache, PatchGrid};
use crate::error::{bail, Result};
use crate::nn::{AttentionBlock, Conv2d, Linear, Module, Param, Rng, Tensor};
use crate::nn::layers::{relu, relu_backward, BlockCache};

/// Channel width of the hidden spatial convolutions.
pub const CNN_CHANNELS: usize = 16;

/// Hyper-parameters of the temporal encoder and its pretraining run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Steps per input segment `L`.
    pub segment_len: usize,
    /// Patch width `p`.
    pub patch_width: usize,
    /// Embedding width `d`.
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub decoder_layers: usize,
    /// Fraction of patches hidden during pretraining.
    pub mask_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Guard added to the standard deviation in every normalization.
    pub epsilon: f64,
    /// Random subset of segments visited per epoch; `None` visits all.
    pub max_segments_per_epoch: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            segment_len: 12,
            patch_width: 3,
            embed_dim: 32,
            layers: 2,
            heads: 4,
            ffn_dim: 64,
            decoder_layers: 1,
            mask_ratio: 0.75,
            epochs: 20,
            batch_size: 32,
            learning_rate: 2e-4,
            seed: 0,
            epsilon: 1e-5,
            max_segments_per_epoch: None,
        }
    }
}

impl EncoderConfig {
    pub fn num_patches(&self) -> usize {
        self.segment_len / self.patch_width.max(1)
    }

    /// Masked patches per instance, kept within `1..L'` so both the masked
    /// and the visible set are non-empty.
    pub fn masked_count(&self) -> usize {
        let lp = self.num_patches();
        let m = crate::math::round(self.mask_ratio * lp as f64) as usize;
        m.clamp(1, lp.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_width == 0 || self.segment_len == 0 || self.segment_len % self.patch_width != 0 {
            bail!(
                Config,
                "segment length L={} must be a positive multiple of patch width p={}",
                self.segment_len,
                self.patch_width
            );
        }
        if self.num_patches() < 2 {
            bail!(Config, "need at least two patches per segment for masking");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            bail!(Config, "mask ratio must lie in (0, 1), got {}", self.mask_ratio);
        }
        if !(self.epsilon > 0.0) {
            bail!(Config, "epsilon must be positive");
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            bail!(Config, "embed dim {} must be divisible by {} heads", self.embed_dim, self.heads);
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            bail!(Config, "batch size and learning rate must be positive");
        }
        Ok(())
    }
}

/// The masked positions of one instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    /// `true` at masked patch indices.
    pub masked: Vec<bool>,
}

impl MaskPlan {
    pub fn random(num_patches: usize, masked_count: usize, rng: &mut Rng) -> Self {
        let mut idx: Vec<usize> = (0..num_patches).collect();
        idx.shuffle(rng);
        let mut masked = vec![false; num_patches];
        for &i in &idx[..masked_count.min(num_patches)] {
            masked[i] = true;
        }
        Self { masked }
    }

    pub fn from_indices(num_patches: usize, indices: &[usize]) -> Self {
        let mut masked = vec![false; num_patches];
        for &i in indices {
            masked[i] = true;
        }
        Self { masked }
    }

    pub fn visible(&self) -> Vec<bool> {
        self.masked.iter().map(|m| !m).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }
}

/// `Conv 1->16 3x3, ReLU, Conv 16->16 3x3, ReLU, Conv 16->1 1x1` over the
/// `L' x d` grid of one instance.
#[derive(Clone, Debug)]
pub struct SpatialCnn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
}

pub struct CnnCache {
    input: Tensor,
    pub pre1: Tensor,
    act1: Tensor,
    pub pre2: Tensor,
    act2: Tensor,
}

impl SpatialCnn {
    pub fn new(rng: &mut Rng) -> Self {
        Self {
            conv1: Conv2d::new("cnn.conv1", 1, CNN_CHANNELS, 3, rng).expect("odd kernel"),
            conv2: Conv2d::new("cnn.conv2", CNN_CHANNELS, CNN_CHANNELS, 3, rng).expect("odd kernel"),
            conv3: Conv2d::new("cnn.conv3", CNN_CHANNELS, 1, 1, rng).expect("odd kernel"),
        }
    }

    /// Input and output are `1 x H x W`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, CnnCache)> {
        let pre1 = self.conv1.forward(input)?;
        let act1 = Tensor::from_vec(pre1.shape(), relu(pre1.data()))?;
        let pre2 = self.conv2.forward(&act1)?;
        let act2 = Tensor::from_vec(pre2.shape(), relu(pre2.data()))?;
        let out = self.conv3.forward(&act2)?;
        Ok((
            out,
            CnnCache {
                input: input.clone(),
                pre1,
                act1,
                pre2,
                act2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &CnnCache, dout: &[f64]) -> Vec<f64> {
        let da2 = self.conv3.backward(&cache.act2, dout);
        let dp2 = relu_backward(cache.pre2.data(), &da2);
        let da1 = self.conv2.backward(&cache.act1, &dp2);
        let dp1 = relu_backward(cache.pre1.data(), &da1);
        self.conv1.backward(&cache.input, &dp1)
    }

    /// Applies the network to every instance of a `B x N x L' x d` grid by
    /// folding nodes into the batch.
    pub fn forward_grid(&self, grid: &PatchGrid) -> Result<PatchGrid> {
        let (b, n, lp, d) = grid.dims();
        let folded = grid.fold_nodes();
        let mut out = Vec::with_capacity(folded.len());
        for inst in folded.data().chunks(lp * d) {
            let (y, _) = self.forward(&Tensor::from_vec(&[1, lp, d], inst.to_vec())?)?;
            out.extend_from_slice(y.data());
        }
        PatchGrid::unfold_nodes(Tensor::from_vec(&[b * n, 1, lp, d], out)?, b, n)
    }
}

impl Module for SpatialCnn {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        self.conv3.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.conv3.visit_mut(f);
    }
}

/// Patch projection, instance norm, spatial CNN, learned positions and a
/// stack of non-causal transformer blocks.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    pub proj: Linear,
    pub cnn: SpatialCnn,
    pub pos: Param,
    pub blocks: Vec<AttentionBlock>,
}

pub struct EncoderCache {
    patches: Vec<f64>,
    norm: InstanceNormCache,
    cnn: CnnCache,
    blocks: Vec<BlockCache>,
    block_inputs: Vec<Vec<f64>>,
    visible: Vec<bool>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::nn::seeded(config.seed);
        let (p, d, lp) = (config.patch_width, config.embed_dim, config.num_patches());
        let proj = Linear::new("enc.proj", p, d, &mut rng);
        let cnn = SpatialCnn::new(&mut rng);
        let pos = Param::new("enc.pos", crate::nn::kaiming_uniform(&[lp, d], d, &mut rng));
        let blocks = (0..config.layers)
            .map(|i| AttentionBlock::new(&format!("enc.block{i}"), d, config.heads, config.ffn_dim, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        // Parameters start f32-representable so checkpoints reload bitwise.
        let mut enc = Self {
            config,
            proj,
            cnn,
            pos,
            blocks,
        };
        enc.round_params_to_f32();
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Encodes one standardized series. Only rows flagged in `visible` are
    /// normalized, convolved as non-zero input, and passed to the transformer.
    /// Returns `visible_count x d` tokens.
    pub fn forward_instance(&self, x: &[f64], visible: &[bool]) -> Result<(Vec<f64>, EncoderCache)> {
        let (d, lp) = (self.config.embed_dim, self.config.num_patches());
        if x.len() != self.config.segment_len || visible.len() != lp {
            bail!(Shape, "encoder expects {} steps and {} patch flags", self.config.segment_len, lp);
        }
        let e = self.proj.forward(x);
        let (ehat, norm) = instance_norm_rows(&e, d, Some(visible), self.config.epsilon);
        let (z, cnn) = self.cnn.forward(&Tensor::from_vec(&[1, lp, d], ehat)?)?;
        let pos = self.pos.value.data();
        let mut h = Vec::with_capacity(lp * d);
        for r in 0..lp {
            if visible[r] {
                for c in 0..d {
                    h.push(z.data()[r * d + c] + pos[r * d + c]);
                }
            }
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(&h);
            block_inputs.push(h);
            blocks.push(cache);
            h = out;
        }
        Ok((
            h,
            EncoderCache {
                patches: x.to_vec(),
                norm,
                cnn,
                blocks,
                block_inputs,
                visible: visible.to_vec(),
            },
        ))
    }

    pub fn backward_instance(&mut self, cache: &EncoderCache, dtokens: &[f64]) {
        let (d, lp) = (self.config.embed_dim, self.config.num_patches());
        let mut g = dtokens.to_vec();
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g);
        }
        let _ = &cache.block_inputs;
        let mut dz = vec![0.0; lp * d];
        let mut k = 0;
        {
            let gp = self.pos.grad.data_mut();
            for r in 0..lp {
                if cache.visible[r] {
                    for c in 0..d {
                        dz[r * d + c] = g[k * d + c];
                        gp[r * d + c] += g[k * d + c];
                    }
                    k += 1;
                }
            }
        }
        let dehat = self.cnn.backward(&cache.cnn, &dz);
        let de = instance_norm_rows_backward(&cache.norm, &dehat, d);
        self.proj.backward(&cache.patches, &de);
    }

    /// Frozen-weight embedding `L' x d` of a raw segment (no masking).
    pub fn embed(&self, segment: &[f64]) -> Result<SegmentEmbedding> {
        Ok(SegmentEmbedding {
            rows: self.config.num_patches(),
            cols: self.config.embed_dim,
            values: self.embed_values(segment)?,
            encoder_hash: self.fingerprint(),
        })
    }

    /// Like [`Encoder::embed`] but returns only the flattened values.
    pub fn embed_values(&self, segment: &[f64]) -> Result<Vec<f64>> {
        if segment.len() != self.config.segment_len {
            bail!(
                Shape,
                "segment has {} steps but the encoder was built for L={} (p={})",
                segment.len(),
                self.config.segment_len,
                self.config.patch_width
            );
        }
        if segment.iter().any(|v| !v.is_finite()) {
            bail!(Data, "segment contains non-finite values");
        }
        let x = standardize(segment, self.config.epsilon);
        let visible = vec![true; self.config.num_patches()];
        let (h, _) = self.forward_instance(&x, &visible)?;
        Ok(h)
    }

    /// Hex SHA-256 over the configuration and parameter values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let c = &self.config;
        for v in [c.segment_len, c.patch_width, c.embed_dim, c.layers, c.heads, c.ffn_dim] {
            h.update((v as u64).to_le_bytes());
        }
        self.visit(&mut |p| {
            h.update(p.name.as_bytes());
            for &x in p.value.data() {
                h.update((x as f32).to_le_bytes());
            }
        });
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

impl Module for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.proj.visit(f);
        self.cnn.visit(f);
        f(&self.pos);
        for b in &self.blocks {
            b.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.proj.visit_mut(f);
        self.cnn.visit_mut(f);
        f(&mut self.pos);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }
}

/// Lightweight reconstruction decoder used only during pretraining.
#[derive(Clone, Debug)]
pub struct MaeDecoder {
    pub mask_token: Param,
    pub pos: Param,
    pub blocks: Vec<AttentionBlock>,
    pub head: Linear,
    dim: usize,
    patch_width: usize,
}

pub struct DecoderCache {
    blocks: Vec<BlockCache>,
    head_input: Vec<f64>,
    masked: Vec<bool>,
}

impl MaeDecoder {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        let mut rng = crate::nn::seeded(config.seed ^ 0xdec0de);
        let (d, lp) = (config.embed_dim, config.num_patches());
        Ok(Self {
            mask_token: Param::new("dec.mask_token", crate::nn::kaiming_uniform(&[d], d, &mut rng)),
            pos: Param::new("dec.pos", crate::nn::kaiming_uniform(&[lp, d], d, &mut rng)),
            blocks: (0..config.decoder_layers)
                .map(|i| AttentionBlock::new(&format!("dec.block{i}"), d, config.heads, config.ffn_dim, &mut rng))
                .collect::<Result<Vec<_>>>()?,
            head: Linear::new("dec.head", d, config.patch_width, &mut rng),
            dim: d,
            patch_width: config.patch_width,
        })
    }

    /// Reconstructs all `L' x p` patch values from the visible tokens.
    pub fn forward(&self, tokens: &[f64], mask: &MaskPlan) -> (Vec<f64>, DecoderCache) {
        let d = self.dim;
        let lp = mask.masked.len();
        let pos = self.pos.value.data();
        let mt = self.mask_token.value.data();
        let mut h = Vec::with_capacity(lp * d);
        let mut k = 0;
        for r in 0..lp {
            for c in 0..d {
                let base = if mask.masked[r] { mt[c] } else { tokens[k * d + c] };
                h.push(base + pos[r * d + c]);
            }
            if !mask.masked[r] {
                k += 1;
            }
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(&h);
            blocks.push(cache);
            h = out;
        }
        let recon = self.head.forward(&h);
        (
            recon,
            DecoderCache {
                blocks,
                head_input: h,
                masked: mask.masked.clone(),
            },
        )
    }

    /// Returns the gradient with respect to the visible tokens.
    pub fn backward(&mut self, cache: &DecoderCache, drecon: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut g = self.head.backward(&cache.head_input, drecon);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(c, &g);
        }
        let mut dtokens = Vec::new();
        let gp = self.pos.grad.data_mut();
        let gm = self.mask_token.grad.data_mut();
        for (r, &m) in cache.masked.iter().enumerate() {
            for c in 0..d {
                let v = g[r * d + c];
                gp[r * d + c] += v;
                if m {
                    gm[c] += v;
                } else {
                    dtokens.push(v);
                }
            }
        }
        dtokens
    }

    pub fn patch_width(&self) -> usize {
        self.patch_width
    }
}

impl Module for MaeDecoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.mask_token);
        f(&self.pos);
        for b in &self.blocks {
            b.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.mask_token);
        f(&mut self.pos);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Mean absolute reconstruction error over masked positions only, plus its
/// gradient with respect to `recon`. Visible positions get zero weight.
pub fn masked_l1_loss(recon: &[f64], target: &[f64], mask: &MaskPlan, patch_width: usize) -> (f64, Vec<f64>) {
    let count = mask.masked_count() * patch_width;
    let mut grad = vec![0.0; recon.len()];
    if count == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for (r, &m) in mask.masked.iter().enumerate() {
        if !m {
            continue;
        }
        for i in r * patch_width..(r + 1) * patch_width {
            let e = recon[i] - target[i];
            loss += crate::math::abs(e);
            grad[i] = if e > 0.0 {
                scale
            } else if e < 0.0 {
                -scale
            } else {
                0.0
            };
        }
    }
    (loss * scale, grad)
}

/// Z-scores a segment with statistics of the visible patches only, so masked
/// values cannot reach the encoder.
pub fn standardize_visible(segment: &[f64], visible: &[bool], patch_width: usize, eps: f64) -> Vec<f64> {
    let seen: Vec<f64> = segment
        .chunks(patch_width)
        .zip(visible)
        .filter(|(_, v)| **v)
        .flat_map(|(c, _)| c.iter().copied())
        .collect();
    let (m, s) = crate::math::mean_std(&seen);
    segment.iter().map(|v| (v - m) / (s + eps)).collect()
}

/// Encoder plus pretraining decoder.
#[derive(Clone, Debug)]
pub struct MaskedAutoencoder {
    pub encoder: Encoder,
    pub decoder: MaeDecoder,
}

impl MaskedAutoencoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let decoder = MaeDecoder::new(&config)?;
        Ok(Self {
            encoder: Encoder::new(config)?,
            decoder,
        })
    }

    /// Masked loss of one raw segment; accumulates gradients when asked.
    pub fn instance_loss(&mut self, segment: &[f64], mask: &MaskPlan, with_grad: bool, grad_scale: f64) -> Result<f64> {
        let cfg = self.encoder.config();
        let visible = mask.visible();
        let x = standardize_visible(segment, &visible, cfg.patch_width, cfg.epsilon);
        let (tokens, ecache) = self.encoder.forward_instance(&x, &visible)?;
        let (recon, dcache) = self.decoder.forward(&tokens, mask);
        let target = standardize(segment, cfg.epsilon);
        let (loss, mut grad) = masked_l1_loss(&recon, &target, mask, self.decoder.patch_width());
        if with_grad {
            grad.iter_mut().for_each(|g| *g *= grad_scale);
            let dtokens = self.decoder.backward(&dcache, &grad);
            self.encoder.backward_instance(&ecache, &dtokens);
        }
        Ok(loss)
    }
}

impl Module for MaskedAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}

/// `L' x d` embedding of one segment, tagged with the producing encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEmbedding {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub encoder_hash: String,
}

impl SegmentEmbedding {
    /// Row-major flattening `vec(V)`.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }
}
