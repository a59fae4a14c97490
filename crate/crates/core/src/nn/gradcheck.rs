use alloc::vec::Vec;

use rand::Rng as _;

use super::rng::seeded;
use super::tensor::Module;
use crate::error::{bail, Result};
use crate::math;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared in absolute terms, since
/// central differences at `h = 1e-5` carry round-off near `1e-11`.
pub const DENOM_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences on `probes`
/// randomly chosen coordinates.
///
/// `loss` is called with `with_grad = true` once to populate gradients (it
/// must zero them first) and with `false` for every perturbed evaluation.
/// Returns the largest `|analytic - numeric| / max(|analytic|, |numeric|, DENOM_FLOOR)`.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, probes: usize, seed: u64) -> Result<f64>
where
    M: Module,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    let base = loss(model, true)?;
    if !base.is_finite() {
        bail!(Numeric, "grad check: non-finite loss {base}");
    }
    let mut sizes = Vec::new();
    let mut analytic = Vec::new();
    model.visit(&mut |p| {
        sizes.push(p.value.len());
        analytic.push(p.grad.data().to_vec());
    });
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let plus = perturbed(model, which, flat, GRAD_CHECK_STEP, &mut loss)?;
        let minus = perturbed(model, which, flat, -GRAD_CHECK_STEP, &mut loss)?;
        if !plus.is_finite() || !minus.is_finite() {
            bail!(Numeric, "grad check: non-finite perturbed loss");
        }
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[which][flat];
        let denom = math::abs(a).max(math::abs(numeric)).max(DENOM_FLOOR);
        worst = worst.max(math::abs(a - numeric) / denom);
    }
    Ok(worst)
}

fn perturbed<M, F>(model: &mut M, which: usize, idx: usize, h: f64, loss: &mut F) -> Result<f64>
where
    M: Module,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    let original = coord(model, which, idx, None);
    coord(model, which, idx, Some(original + h));
    let out = loss(model, false);
    coord(model, which, idx, Some(original));
    out
}

/// Reads coordinate `idx` of parameter `which`, optionally overwriting it.
fn coord<M: Module>(model: &mut M, which: usize, idx: usize, set: Option<f64>) -> f64 {
    let mut i = 0;
    let mut old = 0.0;
    model.visit_mut(&mut |p| {
        if i == which {
            old = p.value.data()[idx];
            if let Some(v) = set {
                p.value.data_mut()[idx] = v;
            }
        }
        i += 1;
    });
    old
}
