//! Blind multi-bit spread-spectrum watermarking in the global DCT of the luminance plane.
//!
//! Each payload bit owns a disjoint set of `chips_per_bit` mid-band coefficients and a
//! keyed `±1` spreading pattern. Embedding adds `±alpha` times the pattern (the sign
//! carries the bit). Decoding correlates the same coefficients with the pattern and
//! thresholds at zero, so no original is needed.
//!
//! Because the DCT is orthonormal, the per-pixel MSE before clipping is exactly
//! `alpha^2 * n_bits * chips_per_bit / (H * W)`. That makes the target PSNR a closed-form
//! choice of `alpha`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::dct::{dct2_plane, idct2_plane};
use crate::imaging::{clamp_unit, Image};
use crate::metrics::{psnr, Psnr};
use crate::scalar::Real;
use crate::stats::BitMessage;

pub const DEFAULT_N_BITS: usize = 64;
pub const DEFAULT_CHIPS_PER_BIT: usize = 128;
pub const DEFAULT_TARGET_PSNR: f64 = 40.0;

/// Inner and outer radius of the carrier annulus, as fractions of Nyquist.
pub const ANNULUS: (f64, f64) = (0.15, 0.45);

/// Secret key: carrier coefficients and spreading signs, derived from the seed and shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "KeyDocument", try_from = "KeyDocument")]
pub struct WatermarkKey {
    seed: u64,
    n_bits: usize,
    chips_per_bit: usize,
    height: usize,
    width: usize,
    /// Flat row-major DCT indices, one disjoint set per bit.
    coefficient_map: Vec<Vec<usize>>,
    spreading_signs: Vec<Vec<i8>>,
}

/// Serialized form of a key; the patterns are regenerated on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDocument {
    pub seed: u64,
    pub n_bits: usize,
    pub chips_per_bit: usize,
    pub height: usize,
    pub width: usize,
}

impl From<WatermarkKey> for KeyDocument {
    fn from(k: WatermarkKey) -> Self {
        KeyDocument {
            seed: k.seed,
            n_bits: k.n_bits,
            chips_per_bit: k.chips_per_bit,
            height: k.height,
            width: k.width,
        }
    }
}

impl TryFrom<KeyDocument> for WatermarkKey {
    type Error = Error;

    fn try_from(d: KeyDocument) -> Result<Self> {
        keygen(d.seed, d.n_bits, d.chips_per_bit, d.height, d.width)
    }
}

/// Row-major DCT indices whose radial frequency lies inside the carrier annulus.
pub fn annulus_indices(height: usize, width: usize) -> Vec<usize> {
    let (lo, hi) = ANNULUS;
    let mut out = Vec::new();
    for u in 0..height {
        let fu = u as f64 / height as f64;
        for v in 0..width {
            let fv = v as f64 / width as f64;
            let r = (fu * fu + fv * fv).sqrt();
            if (lo..=hi).contains(&r) {
                out.push(u * width + v);
            }
        }
    }
    out
}

pub fn keygen(
    seed: u64,
    n_bits: usize,
    chips_per_bit: usize,
    height: usize,
    width: usize,
) -> Result<WatermarkKey> {
    if n_bits == 0 || chips_per_bit == 0 {
        return Err(Error::Domain(
            "n_bits and chips_per_bit must be positive".into(),
        ));
    }
    let mut pool = annulus_indices(height, width);
    let needed = n_bits
        .checked_mul(chips_per_bit)
        .ok_or_else(|| Error::Domain("payload size overflows".into()))?;
    if needed > pool.len() {
        return Err(Error::CapacityExceeded {
            needed,
            capacity: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(needed);
    let coefficient_map: Vec<Vec<usize>> = pool
        .chunks_exact(chips_per_bit)
        .map(|c| c.to_vec())
        .collect();
    let spreading_signs = (0..n_bits)
        .map(|_| {
            (0..chips_per_bit)
                .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                .collect()
        })
        .collect();
    Ok(WatermarkKey {
        seed,
        n_bits,
        chips_per_bit,
        height,
        width,
        coefficient_map,
        spreading_signs,
    })
}

impl WatermarkKey {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn chips_per_bit(&self) -> usize {
        self.chips_per_bit
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn coefficient_map(&self) -> &[Vec<usize>] {
        &self.coefficient_map
    }

    pub fn spreading_signs(&self) -> &[Vec<i8>] {
        &self.spreading_signs
    }

    /// Embedding strength for a target PSNR (peak 1.0). Infinite PSNR gives zero.
    pub fn alpha_for_psnr(&self, target_psnr: f64) -> f64 {
        if target_psnr == f64::INFINITY {
            return 0.0;
        }
        let mse = 10f64.powf(-target_psnr / 10.0);
        (mse * (self.height * self.width) as f64 / (self.n_bits * self.chips_per_bit) as f64)
            .sqrt()
    }

    fn check_image<T: Real>(&self, img: &Image<T>) -> Result<()> {
        if img.dims() != (self.height, self.width) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.height, self.width),
                actual: format!("{}x{}", img.height(), img.width()),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct EmbedResult<T: Real = f64> {
    pub image: Image<T>,
    pub achieved_psnr: Psnr,
    pub alpha: f64,
    /// Fraction of samples that left `[0, 1]` and were clamped.
    pub clipped_fraction: f64,
}

/// Spatial luminance perturbation for `msg` at strength `alpha`, before clipping.
pub fn watermark_residual(msg: &BitMessage, key: &WatermarkKey, alpha: f64) -> Result<Vec<f64>> {
    if msg.n_bits() != key.n_bits {
        return Err(Error::LengthMismatch {
            left: msg.n_bits(),
            right: key.n_bits,
        });
    }
    let mut coeffs = vec![0.0f64; key.height * key.width];
    for ((&bit, idx), signs) in msg
        .bits()
        .iter()
        .zip(&key.coefficient_map)
        .zip(&key.spreading_signs)
    {
        let amp = if bit { alpha } else { -alpha };
        for (&i, &s) in idx.iter().zip(signs) {
            coeffs[i] = amp * s as f64;
        }
    }
    Ok(idct2_plane(&coeffs, key.height, key.width))
}

/// Embeds `msg` into the luminance of `img`. For RGB the same offset goes to every channel,
/// which leaves both chroma axes unchanged.
pub fn embed<T: Real>(
    img: &Image<T>,
    msg: &BitMessage,
    key: &WatermarkKey,
    target_psnr: f64,
) -> Result<EmbedResult<T>> {
    key.check_image(img)?;
    if target_psnr.is_nan() {
        return Err(Error::Domain("target PSNR is NaN".into()));
    }
    let alpha = key.alpha_for_psnr(target_psnr);
    if alpha == 0.0 {
        if msg.n_bits() != key.n_bits {
            return Err(Error::LengthMismatch {
                left: msg.n_bits(),
                right: key.n_bits,
            });
        }
        return Ok(EmbedResult {
            image: img.clone(),
            achieved_psnr: Psnr::Infinite,
            alpha,
            clipped_fraction: 0.0,
        });
    }
    let residual = watermark_residual(msg, key, alpha)?;
    let channels = img.channels();
    let mut clipped = 0usize;
    let data: Vec<T> = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let raw = v + T::lit(residual[i / channels]);
            if raw < T::zero() || raw > T::one() {
                clipped += 1;
            }
            clamp_unit(raw)
        })
        .collect();
    let image = Image::new(img.height(), img.width(), channels, data)?;
    let achieved_psnr = psnr(img, &image)?;
    Ok(EmbedResult {
        image,
        achieved_psnr,
        alpha,
        clipped_fraction: clipped as f64 / img.data().len() as f64,
    })
}

/// Per-bit correlation between the keyed coefficients and the spreading patterns.
pub fn correlations<T: Real>(img: &Image<T>, key: &WatermarkKey) -> Result<Vec<f64>> {
    key.check_image(img)?;
    let lum: Vec<f64> = img.luminance().into_iter().map(|v| v.as_f64()).collect();
    let coeffs = dct2_plane::<f64>(&lum, key.height, key.width);
    Ok(key
        .coefficient_map
        .iter()
        .zip(&key.spreading_signs)
        .map(|(idx, signs)| {
            idx.iter()
                .zip(signs)
                .map(|(&i, &s)| coeffs[i] * s as f64)
                .sum()
        })
        .collect())
}

/// Blind decoding: bit `i` is 1 iff its correlation is non-negative.
pub fn decode<T: Real>(img: &Image<T>, key: &WatermarkKey) -> Result<BitMessage> {
    BitMessage::new(correlations(img, key)?.into_iter().map(|c| c >= 0.0).collect())
}
