//! Patch-based temporal encoder and its masked-autoencoder pretraining.
//!
//! Series are z-scored, cut into width-`p` patches, projected to `d`,
//! instance-normalized, refined by a small spatial CNN over the patch grid,
//! given learned positions and passed through transformer blocks.

mod model;
mod patch;
mod pretrain;

#[cfg(test)]
mod tests;

pub use model::{
    masked_l1_loss, CnnCache, DecoderCache, Encoder, EncoderCache, EncoderConfig, MaeDecoder, MaskPlan,
    MaskedAutoencoder, SegmentEmbedding, SpatialCnn, standardize_visible, CNN_CHANNELS,
};
pub use patch::{instance_normalize, patchify, standardize, unpatchify, PatchGrid};
pub use pretrain::{pretrain, DatasetSegments, PretrainReport, SegmentSource, PROBE_SEGMENTS};
