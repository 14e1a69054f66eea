use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imaging::{clamp_unit, Image};
use crate::scalar::Real;

/// Half-sample symmetric boundary: `... c b a | a b c ... x y z | z y x ...`.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn map_planes<T: Real>(img: &Image<T>, f: impl Fn(&[T], usize, usize) -> Vec<T>) -> Image<T> {
    let (h, w) = img.dims();
    let planes: Vec<Vec<T>> = img.planes().iter().map(|p| f(p, h, w)).collect();
    Image::from_planes(h, w, &planes).expect("filters keep samples finite")
}

/// Adds i.i.d. zero-mean Gaussian noise to every sample, then clamps.
pub fn gaussian_noise<T: Real>(img: &Image<T>, sigma: f64, seed: u64) -> Image<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            clamp_unit(v + T::lit(sigma * z))
        })
        .collect();
    Image::new(img.height(), img.width(), img.channels(), data).expect("clamped")
}

fn gaussian_kernel<T: Real>(sigma: f64) -> Vec<T> {
    let half = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / total)).collect()
}

fn convolve_separable<T: Real>(plane: &[T], h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let half = (kernel.len() / 2) as isize;
    let mut tmp = vec![T::zero(); h * w];
    for r in 0..h {
        let row = &plane[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = T::zero();
            for (k, &wt) in kernel.iter().enumerate() {
                acc = acc + wt * row[mirror(c as isize + k as isize - half, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = T::zero();
            for (k, &wt) in kernel.iter().enumerate() {
                acc = acc + wt * tmp[mirror(r as isize + k as isize - half, h) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with standard deviation `radius`, truncated at 3 sigma.
pub fn gaussian_blur<T: Real>(img: &Image<T>, radius: f64) -> Image<T> {
    let kernel = gaussian_kernel::<T>(radius);
    map_planes(img, |p, h, w| convolve_separable(p, h, w, &kernel))
}

/// Bilinear resampling with pixel-center alignment and clamped edges.
pub fn resize_bilinear<T: Real>(img: &Image<T>, height: usize, width: usize) -> Result<Image<T>> {
    if height == 0 || width == 0 {
        return Err(Error::Domain(format!("cannot resize to {height}x{width}")));
    }
    let (h, w) = img.dims();
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, T)> {
        let ratio = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, T::lit(src - i0 as f64))
            })
            .collect()
    };
    let rows = axis(height, h);
    let cols = axis(width, w);
    let planes: Vec<Vec<T>> = img
        .planes()
        .iter()
        .map(|p| {
            let mut out = Vec::with_capacity(height * width);
            for &(r0, r1, fr) in &rows {
                for &(c0, c1, fc) in &cols {
                    let top = p[r0 * w + c0] + fc * (p[r0 * w + c1] - p[r0 * w + c0]);
                    let bottom = p[r1 * w + c0] + fc * (p[r1 * w + c1] - p[r1 * w + c0]);
                    out.push(top + fr * (bottom - top));
                }
            }
            out
        })
        .collect();
    Image::from_planes(height, width, &planes)
}

/// Resamples to `scale` times the size and back to the original size.
pub fn resize_cycle<T: Real>(img: &Image<T>, scale: f64) -> Result<Image<T>> {
    let (h, w) = img.dims();
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    let small = resize_bilinear(img, sh, sw)?;
    resize_bilinear(&small, h, w)
}

/// Per-channel median over a `window`x`window` neighborhood with mirrored borders.
pub fn median_denoise<T: Real>(img: &Image<T>, window: usize) -> Image<T> {
    let half = (window / 2) as isize;
    map_planes(img, |p, h, w| {
        let mut buf = Vec::with_capacity(window * window);
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h as isize {
            for c in 0..w as isize {
                buf.clear();
                for dr in -half..=half {
                    let rr = mirror(r + dr, h);
                    for dc in -half..=half {
                        buf.push(p[rr * w + mirror(c + dc, w)]);
                    }
                }
                let mid = buf.len() / 2;
                let (_, m, _) =
                    buf.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite"));
                out.push(*m);
            }
        }
        out
    })
}

/// Chambolle's dual projection algorithm for isotropic total-variation denoising,
/// run for a fixed number of iterations on each channel.
pub fn tv_denoise<T: Real>(img: &Image<T>, weight: f64, iterations: usize) -> Image<T> {
    map_planes(img, |p, h, w| tv_plane(p, h, w, T::lit(weight), iterations))
}

fn tv_plane<T: Real>(f: &[T], h: usize, w: usize, weight: T, iterations: usize) -> Vec<T> {
    let n = h * w;
    let tau = T::lit(0.25);
    let mut px = vec![T::zero(); n];
    let mut py = vec![T::zero(); n];
    let mut out = f.to_vec();
    for it in 0..iterations {
        if it > 0 {
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let mut d = -(px[i] + py[i]);
                    if r > 0 {
                        d = d + px[i - w];
                    }
                    if c > 0 {
                        d = d + py[i - 1];
                    }
                    out[i] = f[i] + d;
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = if r + 1 < h { out[i + w] - out[i] } else { T::zero() };
                let gy = if c + 1 < w { out[i + 1] - out[i] } else { T::zero() };
                let norm = T::one() + (gx * gx + gy * gy).sqrt() * tau / weight;
                px[i] = (px[i] - tau * gx) / norm;
                py[i] = (py[i] - tau * gy) / norm;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::hf_energy_fraction;
    use crate::imaging::{mean_var, synth_image, SynthKind};
    use crate::metrics::psnr;

    #[test]
    fn mirror_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(mirror(-9, 2), 0);
    }

    #[test]
    fn noise_moments_on_flat_image() {
        let img = Image::<f64>::filled(256, 256, 1, 0.5).unwrap();
        let noisy = gaussian_noise(&img, 0.1, 3);
        let (mean, var) = mean_var(noisy.data());
        assert!((var.sqrt() - 0.1).abs() <= 0.005, "{}", var.sqrt());
        assert!((mean - 0.5).abs() < 0.002);
    }

    #[test]
    fn noise_depends_on_seed() {
        let img = Image::<f64>::filled(64, 64, 3, 0.5).unwrap();
        assert_eq!(gaussian_noise(&img, 0.05, 1), gaussian_noise(&img, 0.05, 1));
        assert_ne!(gaussian_noise(&img, 0.05, 1), gaussian_noise(&img, 0.05, 2));
    }

    #[test]
    fn blur_preserves_constants_and_lowpasses_noise() {
        let flat = Image::<f64>::filled(32, 40, 3, 0.3).unwrap();
        let blurred = gaussian_blur(&flat, 2.0);
        assert!(blurred.data().iter().all(|v| (v - 0.3).abs() < 1e-12));

        let noise = gaussian_noise(&Image::<f64>::filled(128, 128, 1, 0.5).unwrap(), 0.1, 8);
        let smooth = gaussian_blur(&noise, 1.5);
        let flat = Image::<f64>::filled(128, 128, 1, 0.5).unwrap();
        let before = hf_energy_fraction(&flat, &noise).unwrap();
        let after = hf_energy_fraction(&flat, &smooth).unwrap();
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn resize_unit_scale_is_identity() {
        let img: Image = synth_image(2, 96, 96, SynthKind::Texture).unwrap();
        let out = resize_cycle(&img, 1.0).unwrap();
        assert!(psnr(&img, &out).unwrap().finite().is_none_or(|p| p >= 50.0));
    }

    #[test]
    fn resize_preserves_linear_ramps() {
        let data: Vec<f64> = (0..64 * 64).map(|i| (i % 64) as f64 / 63.0).collect();
        let img = Image::<f64>::new(64, 64, 1, data).unwrap();
        let up = resize_bilinear(&img, 64, 128).unwrap();
        // Interior columns of an upsampled ramp stay on the ramp.
        for c in 2..126 {
            let expected = ((c as f64 + 0.5) * 0.5 - 0.5) / 63.0;
            assert!((up.get(10, c, 0) - expected).abs() < 1e-12);
        }
        assert!(resize_bilinear(&img, 0, 4).is_err());
    }

    #[test]
    fn median_removes_impulse() {
        let mut data = vec![0.2; 25];
        data[12] = 1.0;
        let img = Image::<f64>::new(5, 5, 1, data).unwrap();
        let out = median_denoise(&img, 3);
        assert!(out.data().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn tv_smooths_but_keeps_mean() {
        let noisy = gaussian_noise(&Image::<f64>::filled(64, 64, 1, 0.5).unwrap(), 0.05, 4);
        let out = tv_denoise(&noisy, 0.1, 50);
        let (m0, v0) = mean_var(noisy.data());
        let (m1, v1) = mean_var(out.data());
        assert!(v1 < 0.25 * v0);
        assert!((m0 - m1).abs() < 1e-6);
        let flat = Image::<f64>::filled(16, 16, 3, 0.7).unwrap();
        assert_eq!(tv_denoise(&flat, 0.2, 10), flat);
    }

    #[test]
    fn generic_over_f32() {
        let img: Image<f32> = synth_image(1, 64, 64, SynthKind::Gradient).unwrap();
        let out = gaussian_blur(&img, 1.0);
        let reference = gaussian_blur(&img.cast::<f64>(), 1.0);
        let worst = out
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5);
    }
}
