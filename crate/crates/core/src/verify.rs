//! Two-check verification: the watermark first, removal forensics only if it is absent.

use serde::{Deserialize, Serialize};

use crate::detector::{extract_features, score, DetectorModel};
use crate::error::Result;
use crate::imaging::Image;
use crate::metrics::OperatingPoint;
use crate::scalar::Real;
use crate::stats::{bit_accuracy, rho_value, BitMessage, RhoValue, DEFAULT_RHO_THRESHOLD};
use crate::watermark::{decode, WatermarkKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Watermarked,
    Clean,
    RemovalDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub rho: RhoValue,
    /// Always computed, even when the watermark check already decided the outcome.
    pub detector_score: f64,
    pub operating_point: OperatingPoint,
}

/// The decision rule on its own.
pub fn decide(rho: f64, detector_score: f64, wm_threshold: f64, op: &OperatingPoint) -> Outcome {
    if rho <= wm_threshold {
        Outcome::Watermarked
    } else if op.flags(detector_score) {
        Outcome::RemovalDetected
    } else {
        Outcome::Clean
    }
}

/// Decodes with `key`, compares against the expected `message`, then falls back to the
/// forensic detector at `op` when the watermark is not found.
pub fn verify<T: Real>(
    img: &Image<T>,
    key: &WatermarkKey,
    message: &BitMessage,
    model: &DetectorModel,
    op: &OperatingPoint,
    wm_threshold: f64,
) -> Result<Verdict> {
    op.validate()?;
    let decoded = decode(img, key)?;
    let rho = rho_value(key.n_bits(), bit_accuracy(message, &decoded)?)?;
    let detector_score = score(model, &extract_features(img)?);
    Ok(Verdict {
        outcome: decide(rho.value, detector_score, wm_threshold, op),
        rho,
        detector_score,
        operating_point: *op,
    })
}

/// [`verify`] at the default watermark threshold.
pub fn verify_default<T: Real>(
    img: &Image<T>,
    key: &WatermarkKey,
    message: &BitMessage,
    model: &DetectorModel,
    op: &OperatingPoint,
) -> Result<Verdict> {
    verify(img, key, message, model, op, DEFAULT_RHO_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::imaging::{synth_image, SynthKind};
    use crate::watermark::{embed, keygen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn op(threshold: f64) -> OperatingPoint {
        OperatingPoint {
            target_fpr: 0.01,
            threshold,
            empirical_fpr: 0.0,
            calibration_set_size: 100,
        }
    }

    #[test]
    fn decision_table() {
        let p = op(0.7);
        assert_eq!(decide(1e-7, 0.99, 1e-6, &p), Outcome::Watermarked);
        assert_eq!(decide(1e-6, 0.99, 1e-6, &p), Outcome::Watermarked);
        assert_eq!(decide(2e-6, 0.99, 1e-6, &p), Outcome::RemovalDetected);
        assert_eq!(decide(0.5, 0.7, 1e-6, &p), Outcome::Clean);
        assert_eq!(decide(0.5, 0.2, 1e-6, &p), Outcome::Clean);
    }

    #[test]
    fn watermarked_image_wins_over_detector() {
        let img: Image = synth_image(3, 128, 128, SynthKind::Texture).unwrap();
        let key = keygen(5, 32, 64, 128, 128).unwrap();
        let msg = BitMessage::random(&mut ChaCha8Rng::seed_from_u64(1), 32).unwrap();
        let marked = embed(&img, &msg, &key, 40.0).unwrap().image;
        let mut model = DetectorModel::zero();
        model.bias = 30.0;
        let v = verify_default(&marked, &key, &msg, &model, &op(0.5)).unwrap();
        assert_eq!(v.outcome, Outcome::Watermarked);
        assert!(v.detector_score > 0.99);

        let v = verify_default(&img, &key, &msg, &model, &op(0.5)).unwrap();
        assert_eq!(v.outcome, Outcome::RemovalDetected);
        model.bias = -30.0;
        let v = verify_default(&img, &key, &msg, &model, &op(0.5)).unwrap();
        assert_eq!(v.outcome, Outcome::Clean);
    }

    #[test]
    fn rejects_bad_inputs() {
        let img: Image = synth_image(3, 128, 128, SynthKind::Shapes).unwrap();
        let key = keygen(5, 16, 64, 96, 128).unwrap();
        let msg = BitMessage::new(vec![true; 16]).unwrap();
        let model = DetectorModel::zero();
        assert!(matches!(
            verify_default(&img, &key, &msg, &model, &op(0.5)),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut thin = op(0.5);
        thin.calibration_set_size = 10;
        let key = keygen(5, 16, 64, 128, 128).unwrap();
        assert!(matches!(
            verify_default(&img, &key, &msg, &model, &thin),
            Err(Error::Uncalibrated(_))
        ));
    }
}
