//! Minimal deterministic numerical kernel: tensors, layers with explicit
//! backward passes, Adam, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
pub mod layers;
mod rng;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use layers::{AttentionBlock, Conv2d, LayerNorm, Linear, MultiHeadAttention};
pub use rng::{kaiming_uniform, seeded, Rng};
pub use tensor::{Module, Param, Tensor};
