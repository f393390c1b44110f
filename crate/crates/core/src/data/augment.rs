use rand::Rng;
use rand_distr::StandardNormal;

use super::features::FeatureSequence;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 0.01;
pub const DEFAULT_MASK_P: f64 = 0.1;

/// Train-time feature augmentation: additive `N(0, sigma²)` noise on every
/// entry, then each timestep row zeroed independently with probability
/// `mask_p`.
pub fn augment<R: Rng + ?Sized>(
    x: &FeatureSequence,
    sigma: f64,
    mask_p: f64,
    rng: &mut R,
) -> Result<FeatureSequence> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!(
            "augment sigma must be >= 0, got {sigma}"
        )));
    }
    if !(0.0..=1.0).contains(&mask_p) {
        return Err(Error::contract(format!(
            "augment mask_p must lie in [0, 1], got {mask_p}"
        )));
    }
    let mut out = x.clone();
    let dim = x.dim();
    if sigma > 0.0 {
        for v in out.data_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = (*v as f64 + sigma * n) as f32;
        }
    }
    if mask_p > 0.0 {
        for row in out.data_mut().chunks_mut(dim) {
            if rng.gen_bool(mask_p) {
                row.fill(0.0);
            }
        }
    }
    Ok(out)
}
