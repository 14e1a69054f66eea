use crate::error::Result;
use crate::imaging::spectrum::{fft2, log_spectrum_of_plane, normalized_radius};
use crate::imaging::{Image, Spectrum, LUMA_WEIGHTS};
use crate::scalar::Real;

/// Radius (fraction of Nyquist) separating low from high frequencies.
const HF_CUTOFF: f64 = 0.5;

/// What an attack changed, for visual inspection and spectral summaries.
#[derive(Debug, Clone)]
pub struct ResidualDiagnostics<T: Real = f64> {
    /// `0.5 + (variant - original)`, clamped.
    pub residual: Image<T>,
    /// Log spectrum of the raw luminance residual.
    pub spectrum: Spectrum<T>,
    pub hf_energy_fraction: f64,
}

fn luminance_residual<T: Real>(original: &Image<T>, variant: &Image<T>) -> Result<Vec<T>> {
    original.ensure_same_shape(variant)?;
    let diff: Vec<T> = variant
        .data()
        .iter()
        .zip(original.data())
        .map(|(&v, &o)| v - o)
        .collect();
    if original.channels() == 1 {
        return Ok(diff);
    }
    let [wr, wg, wb] = LUMA_WEIGHTS.map(T::lit);
    Ok(diff
        .chunks_exact(3)
        .map(|px| wr * px[0] + wg * px[1] + wb * px[2])
        .collect())
}

fn hf_fraction_of_plane<T: Real>(plane: &[T], h: usize, w: usize) -> f64 {
    let freq = fft2(plane, h, w);
    let (mut total, mut high) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let e = freq[r * w + c].norm_sqr().as_f64();
            total += e;
            if normalized_radius(r, c, h, w) > HF_CUTOFF {
                high += e;
            }
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// Share of residual energy beyond half the Nyquist radius. Zero when nothing changed.
pub fn hf_energy_fraction<T: Real>(original: &Image<T>, variant: &Image<T>) -> Result<f64> {
    let res = luminance_residual(original, variant)?;
    Ok(hf_fraction_of_plane(&res, original.height(), original.width()))
}

pub fn compute_residual_diagnostics<T: Real>(
    original: &Image<T>,
    variant: &Image<T>,
) -> Result<ResidualDiagnostics<T>> {
    let res = luminance_residual(original, variant)?;
    let (h, w) = original.dims();
    let half = T::lit(0.5);
    let centered: Vec<T> = variant
        .data()
        .iter()
        .zip(original.data())
        .map(|(&v, &o)| half + (v - o))
        .collect();
    Ok(ResidualDiagnostics {
        residual: Image::from_unclamped(h, w, original.channels(), centered)?,
        spectrum: log_spectrum_of_plane(&res, h, w),
        hf_energy_fraction: hf_fraction_of_plane(&res, h, w),
    })
}
