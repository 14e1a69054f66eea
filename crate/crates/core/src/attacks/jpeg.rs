//! In-memory JPEG quantization: 8x8 block DCT on the 0..255 scale, libjpeg quality
//! scaling, rounding to the quantizer lattice and back. No entropy coding, no chroma
//! subsampling.

use crate::error::{Error, Result};
use crate::imaging::{DctBasis, Image};
use crate::scalar::Real;

#[rustfmt::skip]
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
pub const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table with the libjpeg quality law, clamping entries to `[1, 255]`.
pub fn quant_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Domain(format!(
            "JPEG quality must be in [1, 100], got {quality}"
        )));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

/// Round-trips `img` through JPEG quantization at `quality`.
///
/// RGB goes through full-range YCbCr with the luminance table on Y and the chroma table on
/// Cb and Cr. Single-channel images use the luminance table.
pub fn jpeg_like<T: Real>(img: &Image<T>, quality: u8) -> Result<Image<T>> {
    let luma = quant_table(&LUMA_QUANT, quality)?;
    let chroma = quant_table(&CHROMA_QUANT, quality)?;
    let (h, w) = img.dims();
    let basis = DctBasis::<T>::new(8);
    let scale = T::lit(255.0);
    let planes = img.planes();
    let out_planes: Vec<Vec<T>> = if img.channels() == 1 {
        let y: Vec<T> = planes[0].iter().map(|&v| v * scale - T::lit(128.0)).collect();
        let y = quantize_plane(&y, h, w, &luma, &basis);
        vec![y
            .into_iter()
            .map(|v| (v + T::lit(128.0)) / scale)
            .collect()]
    } else {
        let n = h * w;
        let (mut y, mut cb, mut cr) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
        for i in 0..n {
            let (r, g, b) = (planes[0][i] * scale, planes[1][i] * scale, planes[2][i] * scale);
            y[i] = T::lit(0.299) * r + T::lit(0.587) * g + T::lit(0.114) * b - T::lit(128.0);
            cb[i] = T::lit(-0.168_736) * r - T::lit(0.331_264) * g + T::lit(0.5) * b;
            cr[i] = T::lit(0.5) * r - T::lit(0.418_688) * g - T::lit(0.081_312) * b;
        }
        let y = quantize_plane(&y, h, w, &luma, &basis);
        let cb = quantize_plane(&cb, h, w, &chroma, &basis);
        let cr = quantize_plane(&cr, h, w, &chroma, &basis);
        let mut rgb = vec![Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for i in 0..n {
            let yy = y[i] + T::lit(128.0);
            rgb[0].push((yy + T::lit(1.402) * cr[i]) / scale);
            rgb[1].push((yy - T::lit(0.344_136) * cb[i] - T::lit(0.714_136) * cr[i]) / scale);
            rgb[2].push((yy + T::lit(1.772) * cb[i]) / scale);
        }
        rgb
    };
    Image::from_planes(h, w, &out_planes)
}

/// Quantizes every 8x8 block of a level-shifted plane. Partial edge blocks are padded by
/// edge replication and cropped afterwards.
fn quantize_plane<T: Real>(
    plane: &[T],
    h: usize,
    w: usize,
    table: &[u16; 64],
    basis: &DctBasis<T>,
) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    let mut block = [T::zero(); 64];
    let mut tmp = [T::zero(); 64];
    let mut line_in = [T::zero(); 8];
    let mut line_out = [T::zero(); 8];
    for br in (0..h).step_by(8) {
        for bc in (0..w).step_by(8) {
            for r in 0..8 {
                for c in 0..8 {
                    block[r * 8 + c] = plane[(br + r).min(h - 1) * w + (bc + c).min(w - 1)];
                }
            }
            transform_block(&mut block, &mut tmp, &mut line_in, &mut line_out, basis, false);
            for (v, &q) in block.iter_mut().zip(table) {
                let q = T::lit(q as f64);
                *v = (*v / q).round() * q;
            }
            transform_block(&mut block, &mut tmp, &mut line_in, &mut line_out, basis, true);
            for r in 0..8.min(h - br) {
                for c in 0..8.min(w - bc) {
                    out[(br + r) * w + bc + c] = block[r * 8 + c];
                }
            }
        }
    }
    out
}

fn transform_block<T: Real>(
    block: &mut [T; 64],
    tmp: &mut [T; 64],
    line_in: &mut [T; 8],
    line_out: &mut [T; 8],
    basis: &DctBasis<T>,
    inverse: bool,
) {
    let apply = |src: &[T], dst: &mut [T]| {
        if inverse {
            basis.inverse(src, dst)
        } else {
            basis.forward(src, dst)
        }
    };
    for r in 0..8 {
        apply(&block[r * 8..r * 8 + 8], &mut tmp[r * 8..r * 8 + 8]);
    }
    for c in 0..8 {
        for r in 0..8 {
            line_in[r] = tmp[r * 8 + c];
        }
        apply(&line_in[..], &mut line_out[..]);
        for r in 0..8 {
            block[r * 8 + c] = line_out[r];
        }
    }
}
