use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, FEATURE_DIM};
use crate::digest::digest_json;
use crate::error::{Error, Result};
use crate::metrics::Label;

pub const MODEL_VERSION: &str = "wmforensics-detector/1";

/// Logits are clamped here so scores stay strictly inside `(0, 1)`.
const MAX_LOGIT: f64 = 30.0;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub augment_probability: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 256,
            base_lr: 0.05,
            weight_decay: 2.5e-3,
            warmup_epochs: 1,
            seed: 0,
            augment_probability: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch_size must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Domain(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Domain(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::Domain(format!(
                "augment_probability must be in [0, 1], got {}",
                self.augment_probability
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }

    /// Learning rate at `step`: linear warmup then cosine decay to zero.
    pub fn learning_rate(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let total = self.epochs * steps_per_epoch;
        let warmup = (self.warmup_epochs * steps_per_epoch).min(total);
        if step < warmup {
            return self.base_lr * (step + 1) as f64 / warmup as f64;
        }
        let span = (total - warmup).max(1) as f64;
        let progress = (step - warmup) as f64 / span;
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Logistic removal detector over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub version: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub train_config_digest: String,
}

impl DetectorModel {
    /// Untrained model: zero weights and identity normalization.
    pub fn zero() -> Self {
        DetectorModel {
            version: MODEL_VERSION.to_string(),
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
            feature_mean: vec![0.0; FEATURE_DIM],
            feature_std: vec![1.0; FEATURE_DIM],
            train_config_digest: String::new(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Domain(format!(
                "unsupported model version `{}`",
                self.version
            )));
        }
        for v in [&self.weights, &self.feature_mean, &self.feature_std] {
            if v.len() != FEATURE_DIM {
                return Err(Error::LengthMismatch {
                    left: v.len(),
                    right: FEATURE_DIM,
                });
            }
        }
        if self.feature_std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("feature_std must be strictly positive".into()));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("model parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn logit(&self, fv: &FeatureVector) -> f64 {
        let z: f64 = fv
            .values()
            .iter()
            .zip(&self.weights)
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|((x, w), (m, s))| w * (x - m) / s)
            .sum();
        z + self.bias
    }

    /// Digest of the serialized model.
    pub fn digest(&self) -> String {
        digest_json(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: DetectorModel = serde_json::from_str(&text)?;
        model.check()?;
        Ok(model)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Detector score in `(0, 1)`. Above 0.5 leans towards "attacked".
pub fn score(model: &DetectorModel, fv: &FeatureVector) -> f64 {
    sigmoid(model.logit(fv).clamp(-MAX_LOGIT, MAX_LOGIT))
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy of `model` on `records`.
pub fn mean_bce(model: &DetectorModel, records: &[(FeatureVector, Label)]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|(fv, label)| bce(score(model, fv), label.as_bit() as f64))
        .sum();
    total / records.len().max(1) as f64
}

/// Fits a logistic model with Adam on mean BCE plus `weight_decay * |w|^2 / 2`.
///
/// Batches follow a per-epoch permutation drawn from `config.seed`. Features with zero
/// spread on the training set keep unit scale and a frozen zero weight.
pub fn train(records: &[(FeatureVector, Label)], config: &TrainConfig) -> Result<DetectorModel> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("no training records".into()));
    }
    let positives = records.iter().filter(|(_, l)| *l == Label::Positive).count();
    if positives == 0 || positives == records.len() {
        return Err(Error::SingleClass(format!(
            "{} records, {positives} positive",
            records.len()
        )));
    }
    let n = records.len();
    let mut mean = vec![0.0; FEATURE_DIM];
    for (fv, _) in records {
        for (m, x) in mean.iter_mut().zip(fv.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut std = vec![0.0; FEATURE_DIM];
    for (fv, _) in records {
        for ((s, x), m) in std.iter_mut().zip(fv.values()).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let mut active = vec![true; FEATURE_DIM];
    for (i, s) in std.iter_mut().enumerate() {
        *s = (*s / n as f64).sqrt();
        if *s <= 1e-12 * mean[i].abs().max(1.0) {
            *s = 1.0;
            active[i] = false;
        }
    }
    let xs: Vec<Vec<f64>> = records
        .iter()
        .map(|(fv, _)| {
            fv.values()
                .iter()
                .zip(&mean)
                .zip(&std)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect();
    let ys: Vec<f64> = records.iter().map(|(_, l)| l.as_bit() as f64).collect();

    let mut w = vec![0.0; FEATURE_DIM];
    let mut b = 0.0;
    let (mut m_w, mut v_w) = (vec![0.0; FEATURE_DIM], vec![0.0; FEATURE_DIM]);
    let (mut m_b, mut v_b) = (0.0, 0.0);
    let batch = config.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut step = 0usize;
    let mut grad_w = vec![0.0; FEATURE_DIM];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for &i in chunk {
                let z: f64 = xs[i].iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
                let err = sigmoid(z) - ys[i];
                for (g, x) in grad_w.iter_mut().zip(&xs[i]) {
                    *g += err * x;
                }
                grad_b += err;
            }
            let k = chunk.len() as f64;
            let lr = config.learning_rate(step, steps_per_epoch);
            step += 1;
            let t = step as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            for j in 0..FEATURE_DIM {
                if !active[j] {
                    continue;
                }
                let g = grad_w[j] / k + config.weight_decay * w[j];
                m_w[j] = ADAM_BETA1 * m_w[j] + (1.0 - ADAM_BETA1) * g;
                v_w[j] = ADAM_BETA2 * v_w[j] + (1.0 - ADAM_BETA2) * g * g;
                w[j] -= lr * (m_w[j] / c1) / ((v_w[j] / c2).sqrt() + ADAM_EPS);
            }
            let g = grad_b / k;
            m_b = ADAM_BETA1 * m_b + (1.0 - ADAM_BETA1) * g;
            v_b = ADAM_BETA2 * v_b + (1.0 - ADAM_BETA2) * g * g;
            b -= lr * (m_b / c1) / ((v_b / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(DetectorModel {
        version: MODEL_VERSION.to_string(),
        weights: w,
        bias: b,
        feature_mean: mean,
        feature_std: std,
        train_config_digest: config.digest(),
    })
}
