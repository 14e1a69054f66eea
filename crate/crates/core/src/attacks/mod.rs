//! Removal attacks and post-processing transforms, addressed through a compact string
//! grammar such as `gaussian_noise(sigma=0.05)` or `tv_denoise(weight=0.1,iterations=50)`.

mod diagnostics;
mod filters;
mod jpeg;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::scalar::Real;

pub use diagnostics::{compute_residual_diagnostics, hf_energy_fraction, ResidualDiagnostics};
pub use filters::{gaussian_blur, gaussian_noise, median_denoise, resize_bilinear, resize_cycle, tv_denoise};
pub use jpeg::{jpeg_like, quant_table, LUMA_QUANT, CHROMA_QUANT};

/// What an attack is used for in an experiment. Only metadata; it never changes the pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Removal,
    Postprocess,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Removal => "removal",
            Role::Postprocess => "postprocess",
        }
    }
}

/// One attack family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attack {
    Identity,
    GaussianNoise { sigma: f64 },
    /// `radius` is the standard deviation of the Gaussian kernel in pixels.
    GaussianBlur { radius: f64 },
    ResizeCycle { scale: f64 },
    JpegLike { quality: u8 },
    MedianDenoise { window: usize },
    TvDenoise { weight: f64, iterations: usize },
}

impl Attack {
    pub fn family(&self) -> &'static str {
        match self {
            Attack::Identity => "identity",
            Attack::GaussianNoise { .. } => "gaussian_noise",
            Attack::GaussianBlur { .. } => "gaussian_blur",
            Attack::ResizeCycle { .. } => "resize_cycle",
            Attack::JpegLike { .. } => "jpeg_like",
            Attack::MedianDenoise { .. } => "median_denoise",
            Attack::TvDenoise { .. } => "tv_denoise",
        }
    }

    fn params(&self) -> Vec<(&'static str, String)> {
        match *self {
            Attack::Identity => vec![],
            Attack::GaussianNoise { sigma } => vec![("sigma", sigma.to_string())],
            Attack::GaussianBlur { radius } => vec![("radius", radius.to_string())],
            Attack::ResizeCycle { scale } => vec![("scale", scale.to_string())],
            Attack::JpegLike { quality } => vec![("quality", quality.to_string())],
            Attack::MedianDenoise { window } => vec![("window", window.to_string())],
            Attack::TvDenoise { weight, iterations } => vec![
                ("weight", weight.to_string()),
                ("iterations", iterations.to_string()),
            ],
        }
    }

    /// Scalar that grows with distortion strength. Quality is inverted so larger is harsher.
    pub fn severity(&self) -> f64 {
        match *self {
            Attack::Identity => 0.0,
            Attack::GaussianNoise { sigma } => sigma,
            Attack::GaussianBlur { radius } => radius,
            Attack::ResizeCycle { scale } => (1.0 - scale).abs(),
            Attack::JpegLike { quality } => 100.0 - quality as f64,
            Attack::MedianDenoise { window } => window as f64,
            Attack::TvDenoise { weight, .. } => weight,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Attack::Identity => Ok(()),
            Attack::GaussianNoise { sigma } if !(sigma > 0.0 && sigma <= 0.5) => {
                Err(format!("sigma must be in (0, 0.5], got {sigma}"))
            }
            Attack::GaussianBlur { radius } if !(radius > 0.0 && radius <= 8.0) => {
                Err(format!("radius must be in (0, 8], got {radius}"))
            }
            Attack::ResizeCycle { scale } if !(scale > 0.0 && scale <= 2.0) => {
                Err(format!("scale must be in (0, 2], got {scale}"))
            }
            Attack::JpegLike { quality } if !(1..=100).contains(&quality) => {
                Err(format!("quality must be in [1, 100], got {quality}"))
            }
            Attack::MedianDenoise { window } if window < 3 || window % 2 == 0 => {
                Err(format!("window must be odd and at least 3, got {window}"))
            }
            Attack::TvDenoise { weight, iterations }
                if !(weight > 0.0 && weight <= 10.0) || iterations == 0 || iterations > 10_000 =>
            {
                Err(format!(
                    "weight must be in (0, 10] and iterations in [1, 10000], got {weight} and {iterations}"
                ))
            }
            _ => Ok(()),
        }
    }
}

/// A validated attack plus its experimental role.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    attack: Attack,
    role: Role,
}

impl AttackSpec {
    pub fn new(attack: Attack, role: Role) -> Result<Self> {
        let spec = AttackSpec { attack, role };
        attack.validate().map_err(|reason| Error::InvalidAttack {
            spec: spec.to_string(),
            reason,
        })?;
        Ok(spec)
    }

    pub fn removal(attack: Attack) -> Result<Self> {
        Self::new(attack, Role::Removal)
    }

    pub fn postprocess(attack: Attack) -> Result<Self> {
        Self::new(attack, Role::Postprocess)
    }

    pub fn identity() -> Self {
        AttackSpec {
            attack: Attack::Identity,
            role: Role::Removal,
        }
    }

    pub fn attack(&self) -> &Attack {
        &self.attack
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn family(&self) -> &'static str {
        self.attack.family()
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.attack.family())?;
        let mut params = self.attack.params();
        if self.role != Role::Removal {
            params.push(("role", self.role.as_str().to_string()));
        }
        for (i, (k, v)) in params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidAttack {
            spec: s.to_string(),
            reason,
        };
        let text = s.trim();
        let (family, body) = match text.find('(') {
            Some(open) => {
                let body = text[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| invalid("missing closing parenthesis".into()))?;
                (text[..open].trim(), body)
            }
            None => (text, ""),
        };
        let mut params = BTreeMap::new();
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value, got `{part}`")))?;
            if params.insert(k.trim(), v.trim()).is_some() {
                return Err(invalid(format!("duplicate parameter `{}`", k.trim())));
            }
        }
        let role = match params.remove("role") {
            None | Some("removal") => Role::Removal,
            Some("postprocess") => Role::Postprocess,
            Some(other) => return Err(invalid(format!("unknown role `{other}`"))),
        };
        let mut take = |key: &str| -> Result<f64> {
            let raw = params
                .remove(key)
                .ok_or_else(|| invalid(format!("missing parameter `{key}`")))?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid(format!("`{key}` is not a number: `{raw}`")))
        };
        let integer = |v: f64, key: &str| -> Result<usize> {
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                return Err(invalid(format!("`{key}` must be a non-negative integer")));
            }
            Ok(v as usize)
        };
        let attack = match family {
            "identity" => Attack::Identity,
            "gaussian_noise" => Attack::GaussianNoise {
                sigma: take("sigma")?,
            },
            "gaussian_blur" => Attack::GaussianBlur {
                radius: take("radius")?,
            },
            "resize_cycle" => Attack::ResizeCycle {
                scale: take("scale")?,
            },
            "jpeg_like" => {
                let q = integer(take("quality")?, "quality")?;
                Attack::JpegLike {
                    quality: u8::try_from(q).unwrap_or(u8::MAX),
                }
            }
            "median_denoise" => Attack::MedianDenoise {
                window: integer(take("window")?, "window")?,
            },
            "tv_denoise" => Attack::TvDenoise {
                weight: take("weight")?,
                iterations: integer(take("iterations")?, "iterations")?,
            },
            other => return Err(invalid(format!("unknown attack family `{other}`"))),
        };
        if let Some(extra) = params.keys().next() {
            return Err(invalid(format!("unexpected parameter `{extra}`")));
        }
        attack.validate().map_err(invalid)?;
        Ok(AttackSpec { attack, role })
    }
}

impl Serialize for AttackSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttackSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies `spec` to `img`. Only `gaussian_noise` consumes `seed`.
pub fn apply_attack<T: Real>(img: &Image<T>, spec: &AttackSpec, seed: u64) -> Result<Image<T>> {
    match *spec.attack() {
        Attack::Identity => Ok(img.clone()),
        Attack::GaussianNoise { sigma } => Ok(gaussian_noise(img, sigma, seed)),
        Attack::GaussianBlur { radius } => Ok(gaussian_blur(img, radius)),
        Attack::ResizeCycle { scale } => resize_cycle(img, scale),
        Attack::JpegLike { quality } => jpeg_like(img, quality),
        Attack::MedianDenoise { window } => Ok(median_denoise(img, window)),
        Attack::TvDenoise { weight, iterations } => Ok(tv_denoise(img, weight, iterations)),
    }
}

/// The post-processing sweep: four families at three severities each.
pub fn robustness_transforms() -> Vec<AttackSpec> {
    let mut out = Vec::new();
    for quality in [95, 80, 60] {
        out.push(Attack::JpegLike { quality });
    }
    for radius in [1.0, 2.0, 3.0] {
        out.push(Attack::GaussianBlur { radius });
    }
    for scale in [0.75, 0.5, 0.25] {
        out.push(Attack::ResizeCycle { scale });
    }
    for sigma in [0.02, 0.05, 0.10] {
        out.push(Attack::GaussianNoise { sigma });
    }
    out.into_iter()
        .map(|a| AttackSpec::postprocess(a).expect("sweep parameters are in range"))
        .collect()
}
