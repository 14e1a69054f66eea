use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{apply_attack, Attack, AttackSpec};
use crate::error::Result;
use crate::imaging::Image;
use crate::scalar::Real;

pub const DEFAULT_AUGMENT_PROBABILITY: f64 = 0.2;

/// The augmentation drawn for `seed`, or `None` when the image stays untouched.
/// Also returns the seed for any stochastic transform.
pub fn augmentation_for(seed: u64, probability: f64) -> Option<(AttackSpec, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random::<f64>() >= probability {
        return None;
    }
    let attack = match rng.random_range(0..4u8) {
        0 => Attack::JpegLike {
            quality: rng.random_range(60..=100),
        },
        1 => Attack::GaussianBlur {
            radius: rng.random_range(0.5..=2.0),
        },
        2 => Attack::ResizeCycle {
            scale: rng.random_range(0.5..=1.2),
        },
        _ => Attack::GaussianNoise {
            sigma: rng.random_range(0.01..=0.08),
        },
    };
    let spec = AttackSpec::postprocess(attack).expect("augmentation ranges are valid");
    Some((spec, rng.random()))
}

/// Applies at most one random training augmentation. Deterministic per seed.
pub fn augment<T: Real>(img: &Image<T>, seed: u64) -> Result<Image<T>> {
    augment_with_probability(img, seed, DEFAULT_AUGMENT_PROBABILITY)
}

pub fn augment_with_probability<T: Real>(
    img: &Image<T>,
    seed: u64,
    probability: f64,
) -> Result<Image<T>> {
    match augmentation_for(seed, probability) {
        Some((spec, noise_seed)) => apply_attack(img, &spec, noise_seed),
        None => Ok(img.clone()),
    }
}
