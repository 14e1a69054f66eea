use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::Image;

/// Reads an 8-bit PNG or binary PPM/PGM. Samples are divided by 255.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let reader = ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => {
            return Err(Error::UnreadableFile {
                path: path.to_path_buf(),
                reason: "unrecognized header".into(),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    from_dynamic(decoded)
}

fn from_dynamic<T: Real>(decoded: DynamicImage) -> Result<Image<T>> {
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage("zero-dimension image".into()));
    }
    let scale = T::lit(255.0);
    match decoded {
        DynamicImage::ImageLuma8(buf) => Image::new(
            h,
            w,
            1,
            buf.into_raw().into_iter().map(|b| T::lit(b as f64) / scale).collect(),
        ),
        DynamicImage::ImageLumaA8(_) => {
            let buf = decoded.to_luma8();
            Image::new(
                h,
                w,
                1,
                buf.into_raw().into_iter().map(|b| T::lit(b as f64) / scale).collect(),
            )
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let buf = decoded.to_rgb8();
            Image::new(
                h,
                w,
                3,
                buf.into_raw().into_iter().map(|b| T::lit(b as f64) / scale).collect(),
            )
        }
        other => Err(Error::UnsupportedFormat(format!(
            "{:?} samples (only 8-bit gray/RGB)",
            other.color()
        ))),
    }
}

/// Quantizes a sample to a byte with round-half-up.
#[inline]
pub(crate) fn to_byte<T: Real>(v: T) -> u8 {
    let scaled = v.as_f64().clamp(0.0, 1.0) * 255.0;
    (scaled + 0.5).floor().min(255.0) as u8
}

/// Writes an 8-bit file; the format follows the extension (`png`, `pgm`, `ppm`, `pnm`).
pub fn save_image<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "pgm" | "ppm" | "pnm" => ImageFormat::Pnm,
        other => return Err(Error::UnsupportedFormat(format!("extension `{other}`"))),
    };
    if ext == "pgm" && img.channels() != 1 {
        return Err(Error::UnsupportedFormat("PGM needs a single channel".into()));
    }
    if ext == "ppm" && img.channels() != 3 {
        return Err(Error::UnsupportedFormat("PPM needs three channels".into()));
    }
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = if img.channels() == 1 {
        DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        )
    } else {
        DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        )
    };
    dynamic
        .save_with_format(path, format)
        .map_err(|e| Error::UnwritablePath {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
