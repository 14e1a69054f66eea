use crate::error::{Error, Result};
use crate::scalar::Real;

use super::Image;

/// Orthonormal type-II DCT basis for one transform length.
///
/// Row `k` holds `s_k cos(pi (2n + 1) k / 2N)` with `s_0 = sqrt(1/N)` and `s_k = sqrt(2/N)`.
#[derive(Debug, Clone)]
pub struct DctBasis<T: Real> {
    n: usize,
    matrix: Vec<T>,
}

impl<T: Real> DctBasis<T> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "DCT length must be positive");
        let nf = n as f64;
        let mut matrix = Vec::with_capacity(n * n);
        for k in 0..n {
            let scale = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            for i in 0..n {
                let angle = std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf);
                matrix.push(T::lit(scale * angle.cos()));
            }
        }
        Self { n, matrix }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `out[k] = sum_i C[k][i] x[i]`
    pub fn forward(&self, x: &[T], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate().take(self.n) {
            let row = &self.matrix[k * self.n..(k + 1) * self.n];
            *o = row.iter().zip(x).map(|(&c, &v)| c * v).sum();
        }
    }

    /// `out[i] = sum_k C[k][i] X[k]`
    pub fn inverse(&self, coeffs: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (k, &c) in coeffs.iter().enumerate().take(self.n) {
            if c == T::zero() {
                continue;
            }
            let row = &self.matrix[k * self.n..(k + 1) * self.n];
            for (o, &b) in out.iter_mut().zip(row) {
                *o = *o + b * c;
            }
        }
    }
}

/// Separable 2D transform of a row-major `height x width` plane.
pub(crate) fn transform_plane<T: Real>(
    data: &[T],
    height: usize,
    width: usize,
    rows: &DctBasis<T>,
    cols: &DctBasis<T>,
    inverse: bool,
) -> Vec<T> {
    debug_assert_eq!(data.len(), height * width);
    debug_assert_eq!(cols.len(), width);
    debug_assert_eq!(rows.len(), height);

    let mut tmp = vec![T::zero(); height * width];
    for r in 0..height {
        let src = &data[r * width..(r + 1) * width];
        let dst = &mut tmp[r * width..(r + 1) * width];
        if inverse {
            cols.inverse(src, dst);
        } else {
            cols.forward(src, dst);
        }
    }

    let mut column = vec![T::zero(); height];
    let mut result = vec![T::zero(); height];
    let mut out = vec![T::zero(); height * width];
    for c in 0..width {
        for r in 0..height {
            column[r] = tmp[r * width + c];
        }
        if inverse {
            rows.inverse(&column, &mut result);
        } else {
            rows.forward(&column, &mut result);
        }
        for r in 0..height {
            out[r * width + c] = result[r];
        }
    }
    out
}

/// Forward orthonormal 2D DCT of a raw plane.
pub(crate) fn dct2_plane<T: Real>(data: &[T], height: usize, width: usize) -> Vec<T> {
    let rows = DctBasis::new(height);
    let cols = DctBasis::new(width);
    transform_plane(data, height, width, &rows, &cols, false)
}

/// Inverse orthonormal 2D DCT of a raw coefficient plane. The result is not clamped.
pub(crate) fn idct2_plane<T: Real>(coeffs: &[T], height: usize, width: usize) -> Vec<T> {
    let rows = DctBasis::new(height);
    let cols = DctBasis::new(width);
    transform_plane(coeffs, height, width, &rows, &cols, true)
}

/// Orthonormal 2D DCT-II of a single-channel image, returned as a row-major coefficient plane.
pub fn dct2<T: Real>(img: &Image<T>) -> Result<Vec<T>> {
    if img.channels() != 1 {
        return Err(Error::InvalidImage(format!(
            "dct2 needs a single channel, got {}",
            img.channels()
        )));
    }
    Ok(dct2_plane(img.data(), img.height(), img.width()))
}

/// Inverse of [`dct2`]. Reconstructed samples are clamped into `[0, 1]`.
pub fn idct2<T: Real>(coeffs: &[T], height: usize, width: usize) -> Result<Image<T>> {
    if coeffs.len() != height * width {
        return Err(Error::LengthMismatch {
            left: coeffs.len(),
            right: height * width,
        });
    }
    Image::from_unclamped(height, width, 1, idct2_plane(coeffs, height, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.3;
        let n = 16;
        let img = Image::filled(n, n, 1, c).unwrap();
        let coeffs = dct2(&img).unwrap();
        assert!((coeffs[0] - c * n as f64).abs() < 1e-12);
        assert!(coeffs[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn roundtrip_and_parseval_64() {
        let n = 64;
        let data = random_plane(11, n * n);
        let img = Image::new(n, n, 1, data.clone()).unwrap();
        let coeffs = dct2(&img).unwrap();
        let back = idct2_plane(&coeffs, n, n);
        let max_err = data
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-9, "max err {max_err}");

        let e_x: f64 = data.iter().map(|v| v * v).sum();
        let e_c: f64 = coeffs.iter().map(|v| v * v).sum();
        assert!(((e_x - e_c) / e_x).abs() <= 1e-9);
    }

    #[test]
    fn rectangular_roundtrip() {
        let (h, w) = (24, 40);
        let data = random_plane(3, h * w);
        let back = idct2_plane(&dct2_plane(&data, h, w), h, w);
        assert!(data.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn f32_roundtrip_is_close() {
        let n = 32;
        let data: Vec<f32> = random_plane(5, n * n).into_iter().map(|v| v as f32).collect();
        let back = idct2_plane(&dct2_plane(&data, n, n), n, n);
        assert!(data.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn rejects_multichannel() {
        let img = Image::filled(4, 4, 3, 0.5).unwrap();
        assert!(dct2(&img).is_err());
    }
}
