//! Deterministic synthetic cover images.
//!
//! Every kind mixes smooth structure with a faint sensor-like grain so that both flat
//! and textured regions exist. Generation runs in `f64` and is cast at the end.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::Image;

pub const MIN_SYNTH_DIM: usize = 64;

const DETAIL_AMP: (f64, f64) = (0.035, 0.06);
const DETAIL_SLOPE: (f64, f64) = (0.0, 0.6);
const DETAIL_CUTOFF: (f64, f64) = (0.15, 0.22);
const BUMPS: (usize, usize) = (2, 4);
/// Mid-frequency band, in cycles per pixel, whose power the detail layer pins down.
const MID_BAND: (f64, f64) = (0.075, 0.225);
const BUMP_GAIN: f64 = 0.8;
const BUMP_WIDTH: (f64, f64) = (0.02, 0.06);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Texture,
    Gradient,
    Shapes,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Texture, SynthKind::Gradient, SynthKind::Shapes];

    fn tag(self) -> u64 {
        match self {
            SynthKind::Texture => 0x7465_7874,
            SynthKind::Gradient => 0x6772_6164,
            SynthKind::Shapes => 0x7368_6170,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Texture => "texture",
            SynthKind::Gradient => "gradient",
            SynthKind::Shapes => "shapes",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "texture" => Ok(SynthKind::Texture),
            "gradient" => Ok(SynthKind::Gradient),
            "shapes" => Ok(SynthKind::Shapes),
            other => Err(Error::Domain(format!("unknown synth kind `{other}`"))),
        }
    }
}

/// Generates a three-channel synthetic image. Pure in `(seed, height, width, kind)`.
pub fn synth_image<T: Real>(
    seed: u64,
    height: usize,
    width: usize,
    kind: SynthKind,
) -> Result<Image<T>> {
    if height < MIN_SYNTH_DIM || width < MIN_SYNTH_DIM {
        return Err(Error::Domain(format!(
            "synthetic images need at least {MIN_SYNTH_DIM}x{MIN_SYNTH_DIM}, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.tag().rotate_left(17));
    let planes = match kind {
        SynthKind::Texture => texture(&mut rng, height, width),
        SynthKind::Gradient => gradient(&mut rng, height, width),
        SynthKind::Shapes => shapes(&mut rng, height, width),
    };
    let cast: Vec<Vec<T>> = planes
        .into_iter()
        .map(|p| p.into_iter().map(T::lit).collect())
        .collect();
    Image::from_planes(height, width, &cast)
}

/// Gaussian noise shaped by `(f + f0)^-beta * exp(-(f / cutoff)^2)`, scaled to unit std.
/// Frequencies are in cycles per pixel.
fn shaped_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, beta: f64, cutoff: f64) -> Vec<f64> {
    shaped_noise_with(rng, h, w, beta, cutoff, &[], None)
}

/// Like [`shaped_noise`], with the amplitude spectrum further scaled by
/// `exp(sum a * exp(-((f - center) / width)^2))` over `bumps = [(a, center, width)]`.
///
/// With `band = Some((lo, hi))` the field is scaled so that frequencies in `[lo, hi)` carry
/// the same mean power as unit-variance white noise, instead of to unit std.
fn shaped_noise_with(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    beta: f64,
    cutoff: f64,
    bumps: &[(f64, f64, f64)],
    band: Option<(f64, f64)>,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..h * w)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    fft2_in_place(&mut buf, h, w, &mut planner, false);
    let f0 = 1.0 / h.max(w) as f64;
    let (mut band_power, mut band_count) = (0.0, 0usize);
    for r in 0..h {
        let fy = if r <= h / 2 { r as f64 } else { r as f64 - h as f64 } / h as f64;
        for c in 0..w {
            let fx = if c <= w / 2 { c as f64 } else { c as f64 - w as f64 } / w as f64;
            let f = (fx * fx + fy * fy).sqrt();
            let gain = if r == 0 && c == 0 {
                0.0
            } else {
                let tilt: f64 = bumps
                    .iter()
                    .map(|&(a, center, width)| a * (-((f - center) / width).powi(2)).exp())
                    .sum();
                (f + f0).powf(-beta) * (-(f / cutoff).powi(2)).exp() * tilt.exp()
            };
            if let Some((lo, hi)) = band {
                if f >= lo && f < hi {
                    band_power += gain * gain;
                    band_count += 1;
                }
            }
            buf[r * w + c] *= gain;
        }
    }
    fft2_in_place(&mut buf, h, w, &mut planner, true);
    let mut field: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let scale = if band.is_some() && band_power > 0.0 {
        // The unnormalized inverse transform scales by `n`.
        n * (band_power / band_count as f64).sqrt()
    } else {
        let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std > 0.0 {
            std
        } else {
            1.0
        }
    };
    field.iter_mut().for_each(|v| *v = (*v - mean) / scale);
    field
}

fn fft2_in_place(
    buf: &mut [Complex<f64>],
    h: usize,
    w: usize,
    planner: &mut FftPlanner<f64>,
    inverse: bool,
) {
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = buf[r * w + c];
        }
        col.process(&mut column);
        for r in 0..h {
            buf[r * w + c] = column[r];
        }
    }
}

/// Soft-limits values into roughly `[0.04, 0.96]` so watermark clipping stays rare.
fn soft_limit(v: f64) -> f64 {
    0.5 + 0.46 * ((v - 0.5) / 0.46).tanh()
}

fn grain(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Broadband detail with a random spectral slope, a few random spectral bumps and dips,
/// and a log-uniform amplitude.
fn fine_detail(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let beta = rng.random_range(DETAIL_SLOPE.0..DETAIL_SLOPE.1);
    let cutoff = rng.random_range(DETAIL_CUTOFF.0..DETAIL_CUTOFF.1);
    let amp = rng.random_range(DETAIL_AMP.0.ln()..DETAIL_AMP.1.ln()).exp();
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(BUMPS.0..=BUMPS.1))
        .map(|_| {
            (
                rng.random_range(-BUMP_GAIN..BUMP_GAIN),
                rng.random_range(0.0..0.5),
                rng.random_range(BUMP_WIDTH.0..BUMP_WIDTH.1),
            )
        })
        .collect();
    let mut field = shaped_noise_with(rng, h, w, beta, cutoff, &bumps, Some(MID_BAND));
    field.iter_mut().for_each(|v| *v *= amp);
    field
}

/// Luminance field plus two low-amplitude chroma fields, mixed to RGB.
fn colorize(rng: &mut ChaCha8Rng, lum: &[f64], h: usize, w: usize, chroma: f64) -> Vec<Vec<f64>> {
    let cb = shaped_noise(rng, h, w, 2.0, 0.03);
    let cr = shaped_noise(rng, h, w, 2.0, 0.03);
    let tint_b: f64 = rng.random_range(-0.04..0.04);
    let tint_r: f64 = rng.random_range(-0.04..0.04);
    let mut planes = vec![Vec::with_capacity(lum.len()); 3];
    for i in 0..lum.len() {
        let y = lum[i];
        let b = tint_b + chroma * cb[i];
        let r = tint_r + chroma * cr[i];
        // Inverse of the Rec. 601 YCbCr chroma axes.
        planes[0].push(y + 1.402 * r);
        planes[1].push(y - 0.344_136 * b - 0.714_136 * r);
        planes[2].push(y + 1.772 * b);
    }
    planes
}

fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Vec<f64>> {
    let beta = rng.random_range(1.1..1.8);
    let coarse_cutoff = rng.random_range(0.03..0.06);
    let detail_cutoff = rng.random_range(0.06..0.10);
    let coarse = shaped_noise(rng, h, w, beta, coarse_cutoff);
    let detail = shaped_noise(rng, h, w, 1.0, detail_cutoff);
    let amp = rng.random_range(0.07..0.13);
    let detail_amp = rng.random_range(0.004..0.014);
    let sigma_grain = rng.random_range(0.003..0.010);
    let noise = grain(rng, h * w, sigma_grain);
    let fine = fine_detail(rng, h, w);
    let mean = rng.random_range(0.42..0.58);
    let lum: Vec<f64> = (0..h * w)
        .map(|i| soft_limit(mean + amp * coarse[i] + detail_amp * detail[i] + fine[i]) + noise[i])
        .collect();
    colorize(rng, &lum, h, w, 0.03)
}

/// Vertical ramp plus a column-only modulation; grain and detail are zero-mean per row, so row means
/// rise strictly with the ramp.
fn gradient(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Vec<f64>> {
    let lo = rng.random_range(0.12..0.25);
    let hi = rng.random_range(0.75..0.88);
    let waves = rng.random_range(1.0..4.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wave_amp = rng.random_range(0.01..0.04);
    let sigma_grain = rng.random_range(0.003..0.008);
    let mut noise = grain(rng, h * w, sigma_grain);
    let fine = fine_detail(rng, h, w);
    noise.iter_mut().zip(&fine).for_each(|(n, f)| *n += f);
    for row in noise.chunks_exact_mut(w) {
        let m = row.iter().sum::<f64>() / w as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    let mut lum = Vec::with_capacity(h * w);
    for r in 0..h {
        let ramp = lo + (hi - lo) * r as f64 / (h - 1) as f64;
        for c in 0..w {
            let x = c as f64 / w as f64;
            let modulation = wave_amp * (std::f64::consts::TAU * waves * x + phase).sin();
            lum.push(ramp + modulation + noise[r * w + c]);
        }
    }
    // Chroma is kept tiny and row-balanced so every channel keeps the ramp ordering.
    let tint: [f64; 3] = [
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
    ];
    tint.iter()
        .map(|t| lum.iter().map(|v| v + t).collect())
        .collect()
}

fn smoothstep(edge: f64, x: f64) -> f64 {
    let t = ((x + edge) / (2.0 * edge)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn shapes(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Vec<f64>> {
    let background = shaped_noise(rng, h, w, 1.6, 0.05);
    let base = rng.random_range(0.35..0.65);
    let bg_amp = rng.random_range(0.05..0.10);
    let mut lum: Vec<f64> = background.iter().map(|v| base + bg_amp * v).collect();

    let count = rng.random_range(6..14);
    let scale = h.min(w) as f64;
    for _ in 0..count {
        let level = rng.random_range(0.2..0.8);
        let opacity = rng.random_range(0.3..0.8);
        let edge = rng.random_range(2.5..4.0);
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let circle = rng.random_bool(0.5);
        let size = rng.random_range(0.06..0.22) * scale;
        let aspect = rng.random_range(0.5..1.5);
        for r in 0..h {
            for c in 0..w {
                let dy = r as f64 + 0.5 - cy;
                let dx = c as f64 + 0.5 - cx;
                // Signed distance, positive inside.
                let inside = if circle {
                    size - (dx * dx + dy * dy).sqrt()
                } else {
                    (size * aspect - dx.abs()).min(size - dy.abs())
                };
                let coverage = smoothstep(edge, inside);
                if coverage > 0.0 {
                    let i = r * w + c;
                    lum[i] += coverage * opacity * (level - lum[i]);
                }
            }
        }
    }
    let sigma_grain = rng.random_range(0.003..0.010);
    let noise = grain(rng, h * w, sigma_grain);
    let fine = fine_detail(rng, h, w);
    let lum: Vec<f64> = lum
        .iter()
        .zip(&noise)
        .zip(&fine)
        .map(|((v, n), f)| soft_limit(*v + f) + n)
        .collect();
    colorize(rng, &lum, h, w, 0.04)
}
