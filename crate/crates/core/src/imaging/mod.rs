//! Image representation and the frequency-domain primitives used by every other module.

pub(crate) mod dct;
pub(crate) mod io;
pub(crate) mod spectrum;
mod synth;

pub use dct::{dct2, idct2, DctBasis};
pub use io::{load_image, save_image};
pub use spectrum::{fft2, fourier_log_spectrum, normalized_radius, Spectrum};
pub use synth::{synth_image, SynthKind, MIN_SYNTH_DIM};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major intensities in `[0, 1]`, interleaved by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Real = f64> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    /// Builds an image, rejecting out-of-range or non-finite samples.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        Self::check_shape(height, width, channels, data.len())?;
        if let Some(pos) = data
            .iter()
            .position(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
        {
            return Err(Error::InvalidImage(format!(
                "sample {pos} = {} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from arbitrary reals, clamping into `[0, 1]`.
    ///
    /// Non-finite samples are rejected: clamping NaN has no meaningful answer.
    pub fn from_unclamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<T>,
    ) -> Result<Self> {
        Self::check_shape(height, width, channels, data.len())?;
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidImage("non-finite sample".into()));
            }
            *v = clamp_unit(*v);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Stacks single-channel planes into an interleaved image, clamping each sample.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<T>]) -> Result<Self> {
        let channels = planes.len();
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} planes")));
        }
        let n = height * width;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidImage("plane length mismatch".into()));
        }
        let mut data = Vec::with_capacity(n * channels);
        for i in 0..n {
            for p in planes {
                data.push(p[i]);
            }
        }
        Self::from_unclamped(height, width, channels, data)
    }

    fn check_shape(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-dimension image {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height * width * channels != len {
            return Err(Error::InvalidImage(format!(
                "{height}x{width}x{channels} does not match {len} samples"
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Image<T>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.shape_string(),
                actual: other.shape_string(),
            })
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Extracts one channel as a row-major plane.
    pub fn plane(&self, channel: usize) -> Vec<T> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<T>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    /// Rec. 601 luminance plane; single-channel images are returned unchanged.
    pub fn luminance(&self) -> Vec<T> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let [wr, wg, wb] = LUMA_WEIGHTS.map(T::lit);
        self.data
            .chunks_exact(3)
            .map(|px| wr * px[0] + wg * px[1] + wb * px[2])
            .collect()
    }

    pub fn to_gray(&self) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.luminance().into_iter().map(clamp_unit).collect(),
        }
    }

    /// Maps every sample through `f`, clamping the result.
    pub fn map(&self, f: impl Fn(T) -> T) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
        }
    }

    /// Converts the sample type. Values stay inside `[0, 1]`.
    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| clamp_unit(U::lit(v.as_f64())))
                .collect(),
        }
    }

    /// Rounds every sample to the nearest of the 256 levels an 8-bit file can hold, so
    /// the result survives a save/load cycle unchanged.
    pub fn quantize_8bit(&self) -> Image<T> {
        let scale = T::lit(255.0);
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&v| T::lit(io::to_byte(v) as f64) / scale)
                .collect(),
        }
    }

    pub fn mean(&self) -> T {
        let n = T::from_usize_lossy(self.data.len());
        self.data.iter().copied().sum::<T>() / n
    }
}

/// Clamps a sample into `[0, 1]`.
#[inline]
pub fn clamp_unit<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Mean and population variance.
pub fn mean_var<T: Real>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var)
}
