//! Quality and detection-performance metrics: PSNR, ROC/AUC, TPR at a fixed FPR, and
//! conservative operating-point calibration.
//!
//! Detection follows a strict rule throughout: a score is flagged as attacked iff it is
//! strictly greater than the threshold.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::scalar::Real;

/// Peak signal-to-noise ratio. Identical images are an explicit infinite marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(Psnr::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR `{s}`"))),
        }
    }
}

/// `10 log10(1 / MSE)` with peak 1.0, over every channel.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<Psnr> {
    a.ensure_same_shape(b)?;
    let n = a.data().len() as f64;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x - *y).as_f64();
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (n / sse).log10()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Pristine: original or watermarked-but-unattacked.
    Negative,
    /// Attacked.
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub label: Label,
    pub score: f64,
    pub watermarker: String,
    pub attack: String,
    pub transform: String,
}

impl ScoreRecord {
    pub fn new(image_id: impl Into<String>, label: Label, score: f64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::Domain(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            image_id: image_id.into(),
            label,
            score,
            watermarker: "none".into(),
            attack: "none".into(),
            transform: "none".into(),
        })
    }

    pub fn with_context(
        mut self,
        watermarker: impl Into<String>,
        attack: impl Into<String>,
        transform: impl Into<String>,
    ) -> Self {
        self.watermarker = watermarker.into();
        self.attack = attack.into();
        self.transform = transform.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores strictly above this value are flagged. `+inf` at the `(0, 0)` anchor.
    pub threshold: f64,
}

/// Monotone ROC curve anchored at `(0, 0)` and `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

fn split_scores(records: &[ScoreRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in records {
        match r.label {
            Label::Positive => pos.push(r.score),
            Label::Negative => neg.push(r.score),
        }
    }
    (pos, neg)
}

/// Sweeps thresholds over the distinct scores, from the highest down.
///
/// Tied scores move both rates at once, producing diagonal segments.
pub fn roc(records: &[ScoreRecord]) -> Result<RocCurve> {
    let (pos, neg) = split_scores(records);
    roc_from_scores(&pos, &neg)
}

pub fn roc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<RocCurve> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::SingleClass(format!(
            "ROC needs both classes ({} positives, {} negatives)",
            positives.len(),
            negatives.len()
        )));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let score = all[i].0;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Everything at or above `score` is now flagged: threshold is the next score down.
        let threshold = if i < all.len() {
            all[i].0
        } else {
            f64::NEG_INFINITY
        };
        points.push(RocPoint {
            fpr: fp as f64 / nn,
            tpr: tp as f64 / np,
            threshold,
        });
    }
    Ok(RocCurve {
        points,
        positives: positives.len(),
        negatives: negatives.len(),
    })
}

/// Trapezoidal area under the curve.
///
/// Curves built from scores are integrated on their integer confusion counts with one
/// final division, so the result equals the pairwise Mann-Whitney statistic exactly.
pub fn auc(curve: &RocCurve) -> f64 {
    if let Some(area) = integer_trapezoid(curve) {
        return area;
    }
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

fn integer_trapezoid(curve: &RocCurve) -> Option<f64> {
    let (np, nn) = (curve.positives, curve.negatives);
    if np == 0 || nn == 0 {
        return None;
    }
    let mut counts = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        let tp = (p.tpr * np as f64).round();
        let fp = (p.fpr * nn as f64).round();
        if (tp / np as f64 - p.tpr).abs() > 1e-12 || (fp / nn as f64 - p.fpr).abs() > 1e-12 {
            return None;
        }
        counts.push((tp as u128, fp as u128));
    }
    let doubled: u128 = counts
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) * (w[1].0 + w[0].0))
        .sum();
    Some(doubled as f64 / (2 * np as u128 * nn as u128) as f64)
}

/// Empirical operating point: `threshold` keeps the observed FPR at or below `target_fpr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub target_fpr: f64,
    pub threshold: f64,
    pub empirical_fpr: f64,
    pub calibration_set_size: usize,
}

impl OperatingPoint {
    pub fn required_negatives(target_fpr: f64) -> usize {
        // The slack absorbs `1 / 1e-2 = 100.00000000000001`-style representation error.
        (1.0 / target_fpr - 1e-9).ceil().max(1.0) as usize
    }

    /// Checks the invariants a calibrated point must satisfy.
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fpr > 0.0 && self.target_fpr < 1.0) {
            return Err(Error::Uncalibrated(format!(
                "target FPR {} outside (0, 1)",
                self.target_fpr
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Uncalibrated("threshold is not finite".into()));
        }
        if self.empirical_fpr > self.target_fpr {
            return Err(Error::Uncalibrated(format!(
                "empirical FPR {} exceeds target {}",
                self.empirical_fpr, self.target_fpr
            )));
        }
        let needed = Self::required_negatives(self.target_fpr);
        if self.calibration_set_size < needed {
            return Err(Error::Uncalibrated(format!(
                "calibrated on {} negatives, needs {needed}",
                self.calibration_set_size
            )));
        }
        Ok(())
    }

    pub fn flags(&self, score: f64) -> bool {
        score > self.threshold
    }
}

/// Smallest threshold among the observed negatives and 0.5 whose strict-exceedance rate
/// stays within `target_fpr`.
pub fn calibrate(negative_scores: &[f64], target_fpr: f64) -> Result<OperatingPoint> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::Domain(format!("target FPR {target_fpr} outside (0, 1)")));
    }
    let needed = OperatingPoint::required_negatives(target_fpr);
    if negative_scores.len() < needed {
        return Err(Error::InsufficientNegatives {
            target: target_fpr,
            needed,
            available: negative_scores.len(),
        });
    }
    if negative_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("non-finite negative score".into()));
    }
    let mut sorted = negative_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let exceed = |t: f64| n - sorted.partition_point(|&s| s <= t);
    let allowed = (target_fpr * n as f64 + 1e-9).floor() as usize;

    let mut candidates = sorted.clone();
    candidates.push(0.5);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let threshold = candidates
        .into_iter()
        .find(|&t| exceed(t) <= allowed)
        .expect("the largest negative admits zero false positives");
    Ok(OperatingPoint {
        target_fpr,
        threshold,
        empirical_fpr: exceed(threshold) as f64 / n as f64,
        calibration_set_size: n,
    })
}

/// TPR at the threshold calibrated on the negatives of the same record set.
pub fn tpr_at_fpr(records: &[ScoreRecord], target_fpr: f64) -> Result<f64> {
    let (pos, neg) = split_scores(records);
    if pos.is_empty() {
        return Err(Error::SingleClass("no positives".into()));
    }
    let op = calibrate(&neg, target_fpr)?;
    Ok(tpr_at(&pos, &op))
}

/// Fraction of positive scores flagged by an operating point.
pub fn tpr_at(positive_scores: &[f64], op: &OperatingPoint) -> f64 {
    if positive_scores.is_empty() {
        return 0.0;
    }
    positive_scores.iter().filter(|&&s| op.flags(s)).count() as f64 / positive_scores.len() as f64
}

/// Writes `fpr,tpr,threshold` rows.
pub fn write_roc_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{:.6},{:.6},{}\n",
            p.fpr,
            p.tpr,
            format_threshold(p.threshold)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn format_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:.9}")
    }
}

pub fn write_operating_points(points: &[OperatingPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(points)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Reads either a single operating point or an array of them.
pub fn read_operating_points(path: impl AsRef<Path>) -> Result<Vec<OperatingPoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let points = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    Ok(points)
}

/// Log-FPR ROC plot on fixed axes, FPR in `[1e-4, 1]`.
pub fn roc_svg(curves: &[(String, &RocCurve)], title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    const PALETTE: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    ];
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x_of = |fpr: f64| {
        let lf = fpr.max(1e-4).log10();
        LEFT + (lf + 4.0) / 4.0 * pw
    };
    let y_of = |tpr: f64| TOP + (1.0 - tpr) * ph;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n\
         <rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n",
        W / 2.0,
        escape_xml(title)
    ));
    for decade in 0..=4 {
        let fpr = 10f64.powi(-4 + decade);
        let x = x_of(fpr);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{TOP}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">1e{}</text>\n",
            TOP + ph,
            TOP + ph + 14.0,
            -4 + decade
        ));
    }
    for tick in 0..=5 {
        let tpr = tick as f64 / 5.0;
        let y = y_of(tpr);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{tpr:.1}</text>\n",
            LEFT - 6.0,
            y + 3.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">False positive rate (log)</text>\n\
         <text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">True positive rate</text>\n",
        LEFT + pw / 2.0,
        H - 10.0,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    ));
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.fpr), y_of(p.tpr)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = TOP + ph - 12.0 - 14.0 * (curves.len() - 1 - i) as f64;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{ly:.1}\" font-size=\"10\" fill=\"{color}\">{} (AUC {:.6})</text>\n",
            LEFT + pw * 0.45,
            escape_xml(name),
            auc(curve)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
