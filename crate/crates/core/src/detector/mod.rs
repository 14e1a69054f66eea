//! Removal forensics: feature extraction, training augmentations and the logistic detector.

mod augment;
mod features;
mod model;

use std::fmt::Write as _;
use std::path::Path;

pub use augment::{augment, augment_with_probability, augmentation_for, DEFAULT_AUGMENT_PROBABILITY};
pub use features::{
    extract_features, FeatureVector, BLOCKINESS_INDEX, FEATURE_DIM, FEATURE_NAMES, HF_INDEX,
    MIN_FEATURE_DIM, NOISE_INDEX, RADIAL_BINS,
};
pub use model::{mean_bce, score, sigmoid, train, DetectorModel, TrainConfig, MODEL_VERSION};

use crate::error::{Error, Result};
use crate::metrics::Label;

/// One row of a feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub label: Label,
    pub features: FeatureVector,
}

pub fn feature_csv_header() -> String {
    let mut s = String::from("image_id,label");
    for name in FEATURE_NAMES {
        s.push(',');
        s.push_str(name);
    }
    s
}

/// Serializes rows as `image_id,label,<features>`; labels are 0 or 1.
pub fn format_feature_csv(rows: &[FeatureRow]) -> String {
    let mut out = feature_csv_header();
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{},{},{}", row.image_id, row.label.as_bit(), row.features);
    }
    out
}

pub fn write_feature_csv(rows: &[FeatureRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_feature_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_feature_csv(text: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == feature_csv_header() => {}
        _ => {
            return Err(Error::Malformed {
                line: 1,
                reason: "expected feature CSV header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != FEATURE_DIM + 2 {
            return Err(malformed(format!(
                "expected {} fields, found {}",
                FEATURE_DIM + 2,
                fields.len()
            )));
        }
        let label = fields[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_bit)
            .ok_or_else(|| malformed(format!("label must be 0 or 1, got `{}`", fields[1])))?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| malformed(format!("not a number: `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let features = FeatureVector::new(values).map_err(|e| malformed(e.to_string()))?;
        rows.push(FeatureRow {
            image_id: fields[0].to_string(),
            label,
            features,
        });
    }
    Ok(rows)
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text)
}
