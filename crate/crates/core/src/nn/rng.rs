use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform fan-in scaled initialization, bound `1/sqrt(fan_in)`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-bound..bound);
    }
    t
}
