//! Handcrafted forensic features computed on the luminance plane at native resolution.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attacks::median_denoise;
use crate::error::{Error, Result};
use crate::imaging::io::to_byte;
use crate::imaging::spectrum::{fft2, normalized_radius};
use crate::imaging::{mean_var, Image};
use crate::scalar::Real;

pub const RADIAL_BINS: usize = 16;
pub const FEATURE_DIM: usize = RADIAL_BINS + 7;
pub const MIN_FEATURE_DIM: usize = 64;

/// Log floor for empty spectral power.
const POWER_FLOOR: f64 = 1e-12;
/// Consistency constant turning a median absolute deviation into a Gaussian sigma.
const MAD_TO_SIGMA: f64 = 0.6745;
const BLOCK: usize = 8;
const BLOCKINESS_EPS: f64 = 1e-9;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "radial_00",
    "radial_01",
    "radial_02",
    "radial_03",
    "radial_04",
    "radial_05",
    "radial_06",
    "radial_07",
    "radial_08",
    "radial_09",
    "radial_10",
    "radial_11",
    "radial_12",
    "radial_13",
    "radial_14",
    "radial_15",
    "hf_energy_fraction",
    "noise_sigma",
    "blockiness",
    "median_residual_variance",
    "median_residual_kurtosis",
    "luminance_variance",
    "luminance_entropy",
];

pub const HF_INDEX: usize = RADIAL_BINS;
pub const NOISE_INDEX: usize = RADIAL_BINS + 1;
pub const BLOCKINESS_INDEX: usize = RADIAL_BINS + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector {
    values: [f64; FEATURE_DIM],
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let values: [f64; FEATURE_DIM] =
            values
                .try_into()
                .map_err(|v: Vec<f64>| Error::LengthMismatch {
                    left: v.len(),
                    right: FEATURE_DIM,
                })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature values must be finite".into()));
        }
        Ok(FeatureVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn radial_bins(&self) -> &[f64] {
        &self.values[..RADIAL_BINS]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.values.to_vec()
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn extract_features<T: Real>(img: &Image<T>) -> Result<FeatureVector> {
    let (h, w) = img.dims();
    if h < MIN_FEATURE_DIM || w < MIN_FEATURE_DIM {
        return Err(Error::InvalidImage(format!(
            "feature extraction needs at least {MIN_FEATURE_DIM}x{MIN_FEATURE_DIM}, got {h}x{w}"
        )));
    }
    let lum: Vec<f64> = img.luminance().into_iter().map(|v| v.as_f64()).collect();
    let mut values = Vec::with_capacity(FEATURE_DIM);
    let (radial, hf) = spectral_features(&lum, h, w);
    values.extend(radial);
    values.push(hf);
    values.push(noise_sigma(&lum, h, w));
    values.push(blockiness(&lum, h, w));
    let (res_var, res_kurt) = median_residual_moments(&lum, h, w)?;
    values.push(res_var);
    values.push(res_kurt);
    values.push(mean_var(&lum).1);
    values.push(entropy_bits(&lum));
    FeatureVector::new(values)
}

/// Mean log power per radial annulus, plus the share of AC energy beyond half Nyquist.
fn spectral_features(lum: &[f64], h: usize, w: usize) -> (Vec<f64>, f64) {
    let freq = fft2(lum, h, w);
    let n = (h * w) as f64;
    let mut sums = vec![0.0; RADIAL_BINS];
    let mut counts = vec![0usize; RADIAL_BINS];
    let (mut total, mut high) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if r == 0 && c == 0 {
                continue;
            }
            let power = freq[r * w + c].norm_sqr() / n;
            let rho = normalized_radius(r, c, h, w);
            total += power;
            if rho > 0.5 {
                high += power;
            }
            let bin = (rho * RADIAL_BINS as f64) as usize;
            if bin < RADIAL_BINS {
                sums[bin] += power.max(POWER_FLOOR).ln();
                counts[bin] += 1;
            }
        }
    }
    let radial = sums
        .into_iter()
        .zip(counts)
        .map(|(s, k)| if k == 0 { POWER_FLOOR.ln() } else { s / k as f64 })
        .collect();
    let hf = if total > 0.0 { high / total } else { 0.0 };
    (radial, hf)
}

/// Robust noise level from the 3x3 second-difference mask `[1 -2 1; -2 4 -2; 1 -2 1]`,
/// whose response to white noise has standard deviation `6 sigma`.
fn noise_sigma(lum: &[f64], h: usize, w: usize) -> f64 {
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut responses = Vec::with_capacity((h - 2) * (w - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut acc = 0.0;
            for (dr, row) in MASK.iter().enumerate() {
                for (dc, k) in row.iter().enumerate() {
                    acc += k * lum[(r + dr - 1) * w + c + dc - 1];
                }
            }
            responses.push(acc);
        }
    }
    let med = median(&mut responses);
    let mut dev: Vec<f64> = responses.iter().map(|v| (v - med).abs()).collect();
    median(&mut dev) / MAD_TO_SIGMA / 6.0
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Mean absolute neighbor difference across 8-pixel block boundaries over the mean
/// elsewhere. Smooth or constant content gives 1.
fn blockiness(lum: &[f64], h: usize, w: usize) -> f64 {
    let (mut on, mut on_n, mut off, mut off_n) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..h {
        for c in 0..w - 1 {
            let d = (lum[r * w + c + 1] - lum[r * w + c]).abs();
            if (c + 1) % BLOCK == 0 {
                on += d;
                on_n += 1;
            } else {
                off += d;
                off_n += 1;
            }
        }
    }
    for r in 0..h - 1 {
        for c in 0..w {
            let d = (lum[(r + 1) * w + c] - lum[r * w + c]).abs();
            if (r + 1) % BLOCK == 0 {
                on += d;
                on_n += 1;
            } else {
                off += d;
                off_n += 1;
            }
        }
    }
    let on = on / on_n.max(1) as f64;
    let off = off / off_n.max(1) as f64;
    (on + BLOCKINESS_EPS) / (off + BLOCKINESS_EPS)
}

/// Variance and excess kurtosis of the residual against a 3x3 median filter.
fn median_residual_moments(lum: &[f64], h: usize, w: usize) -> Result<(f64, f64)> {
    let plane = Image::new(h, w, 1, lum.to_vec())?;
    let smooth = median_denoise(&plane, 3);
    let res: Vec<f64> = lum.iter().zip(smooth.data()).map(|(a, b)| a - b).collect();
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    let m2 = res.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = res.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let kurt = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    Ok((m2, kurt))
}

/// Shannon entropy in bits of the 8-bit luminance histogram.
fn entropy_bits(lum: &[f64]) -> f64 {
    let mut hist = [0usize; 256];
    for &v in lum {
        hist[to_byte(v) as usize] += 1;
    }
    let n = lum.len() as f64;
    hist.iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.log2()
        })
        .sum()
}
