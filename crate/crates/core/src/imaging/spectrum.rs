use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Real;

use super::Image;

/// DC-centered log-magnitude spectrum, `log(1 + |FFT|)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T: Real = f64> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Real> Spectrum<T> {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    /// Row and column of the DC bin after centering.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Mean value over `bins` equal-width annuli of normalized radius in `[0, 1)`.
    ///
    /// The DC bin is excluded. Empty annuli report zero.
    pub fn radial_means(&self, bins: usize) -> Vec<T> {
        let (cr, cc) = self.center();
        let mut sums = vec![T::zero(); bins];
        let mut counts = vec![0usize; bins];
        for r in 0..self.height {
            for c in 0..self.width {
                if r == cr && c == cc {
                    continue;
                }
                let fy = (r as f64 - cr as f64) / self.height as f64;
                let fx = (c as f64 - cc as f64) / self.width as f64;
                let rho = 2.0 * (fx * fx + fy * fy).sqrt();
                let bin = (rho * bins as f64) as usize;
                if bin < bins {
                    sums[bin] = sums[bin] + self.at(r, c);
                    counts[bin] += 1;
                }
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, n)| if n == 0 { T::zero() } else { s / T::from_usize_lossy(n) })
            .collect()
    }

    /// Renders the spectrum as an 8-bit-ready grayscale image scaled to its maximum.
    pub fn to_image(&self) -> Image<T> {
        let max = self.values.iter().copied().fold(T::zero(), T::max);
        let data = if max > T::zero() {
            self.values.iter().map(|&v| v / max).collect()
        } else {
            vec![T::zero(); self.values.len()]
        };
        Image::from_unclamped(self.height, self.width, 1, data).expect("spectrum shape is valid")
    }
}

/// Unnormalized 2D FFT of a real row-major plane (DC at index 0).
pub fn fft2<T: Real>(data: &[T], height: usize, width: usize) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = data.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let mut planner = FftPlanner::<T>::new();
    let row_fft = planner.plan_fft_forward(width);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut column = vec![Complex::new(T::zero(), T::zero()); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = buf[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            buf[r * width + c] = column[r];
        }
    }
    buf
}

/// Normalized radial frequency of an unshifted FFT bin, as a fraction of Nyquist.
///
/// Axis-aligned Nyquist bins sit at 1.0; the corners reach `sqrt(2)`.
#[inline]
pub fn normalized_radius(row: usize, col: usize, height: usize, width: usize) -> f64 {
    let signed = |i: usize, n: usize| {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    let fy = signed(row, height) / height as f64;
    let fx = signed(col, width) / width as f64;
    2.0 * (fx * fx + fy * fy).sqrt()
}

/// `log(1 + |FFT|)` of the luminance plane, shifted so DC sits at `(H/2, W/2)`.
pub fn fourier_log_spectrum<T: Real>(img: &Image<T>) -> Spectrum<T> {
    let lum = img.luminance();
    log_spectrum_of_plane(&lum, img.height(), img.width())
}

pub(crate) fn log_spectrum_of_plane<T: Real>(
    plane: &[T],
    height: usize,
    width: usize,
) -> Spectrum<T> {
    let freq = fft2(plane, height, width);
    let mut values = vec![T::zero(); height * width];
    for r in 0..height {
        let sr = (r + height / 2) % height;
        for c in 0..width {
            let sc = (c + width / 2) % width;
            values[sr * width + sc] = freq[r * width + c].norm().ln_1p();
        }
    }
    Spectrum {
        height,
        width,
        values,
    }
}
