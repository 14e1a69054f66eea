use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{roc_svg, write_roc_csv, RocCurve};

/// Cells with fewer samples than this are flagged `low_n`.
pub const LOW_N: usize = 10;

/// One quality cell. `attack == "none"` is the watermarked, unattacked variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRow {
    pub watermarker: String,
    pub attack: String,
    pub n: usize,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub lpips_mean: Option<f64>,
    pub fid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalRow {
    pub watermarker: String,
    pub attack: String,
    pub n: usize,
    pub psnr_mean: Option<f64>,
    pub bit_accuracy: Option<f64>,
    pub asr: Option<f64>,
}

/// Forensic detection of one attack. `tpr` follows the report's target FPRs; `None`
/// marks a target the calibration pool cannot certify.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub watermarker: String,
    pub attack: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: Option<f64>,
    pub tpr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    /// `none` for the untransformed baseline.
    pub transform: String,
    pub family: String,
    pub severity: Option<f64>,
    pub curve: RocCurve,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooRow {
    pub held_out: String,
    pub seen_auc: Option<f64>,
    pub held_out_auc: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPointSummary {
    pub target_fpr: f64,
    pub threshold: Option<f64>,
    pub empirical_fpr: Option<f64>,
    /// Why the point is absent, if it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub bench_config_digest: String,
    pub dataset_config_digest: String,
    pub manifest_digest: String,
    pub dataset_seed: u64,
    pub train_seed: u64,
    pub score_source: String,
    pub model_digest: Option<String>,
    pub entries: usize,
    pub split_ids: BTreeMap<String, usize>,
    pub pristine_fraction: f64,
    pub calibration_pool: String,
    pub calibration_negatives: usize,
    pub operating_points: Vec<OperatingPointSummary>,
    pub unscored_entries: usize,
    pub unmatched_records: usize,
    pub robustness: bool,
    pub loo: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub target_fprs: Vec<f64>,
    pub quality: Vec<QualityRow>,
    pub survival: Vec<SurvivalRow>,
    pub detection: Vec<DetectionRow>,
    pub robustness: Vec<RobustnessRow>,
    pub loo: Vec<LooRow>,
    pub summary: Summary,
}

impl QualityRow {
    pub fn low_n(&self) -> bool {
        self.n < LOW_N
    }
}

impl SurvivalRow {
    pub fn low_n(&self) -> bool {
        self.n < LOW_N
    }
}

impl DetectionRow {
    pub fn low_n(&self) -> bool {
        self.n_pos < LOW_N || self.n_neg < LOW_N
    }
}

impl RobustnessRow {
    pub fn low_n(&self) -> bool {
        self.curve.positives < LOW_N || self.curve.negatives < LOW_N
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let header = strings(&["watermarker", "attack", "n", "psnr_mean", "psnr_std", "lpips_mean", "fid", "low_n"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.watermarker.clone(),
                r.attack.clone(),
                r.n.to_string(),
                num(r.psnr_mean),
                num(r.psnr_std),
                num(r.lpips_mean),
                num(r.fid),
                r.low_n().to_string(),
            ]
        })
        .collect();
    table(&header, &body)
}

pub fn survival_csv(rows: &[SurvivalRow]) -> String {
    let header = strings(&["watermarker", "attack", "n", "psnr_mean", "bit_accuracy", "asr", "low_n"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.watermarker.clone(),
                r.attack.clone(),
                r.n.to_string(),
                num(r.psnr_mean),
                num(r.bit_accuracy),
                num(r.asr),
                r.low_n().to_string(),
            ]
        })
        .collect();
    table(&header, &body)
}

pub fn detection_csv(rows: &[DetectionRow], target_fprs: &[f64]) -> String {
    let mut header = strings(&["watermarker", "attack", "n_pos", "n_neg", "auc"]);
    header.extend(target_fprs.iter().map(|t| format!("tpr_at_fpr_{t:e}")));
    header.push("low_n".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.watermarker.clone(),
                r.attack.clone(),
                r.n_pos.to_string(),
                r.n_neg.to_string(),
                num(r.auc),
            ];
            row.extend(r.tpr.iter().map(|&t| num(t)));
            row.push(r.low_n().to_string());
            row
        })
        .collect();
    table(&header, &body)
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let header = strings(&["transform", "family", "severity", "n_pos", "n_neg", "auc", "low_n"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.transform.clone(),
                r.family.clone(),
                r.severity.map_or_else(|| "NA".into(), |s| s.to_string()),
                r.curve.positives.to_string(),
                r.curve.negatives.to_string(),
                num(Some(r.auc)),
                r.low_n().to_string(),
            ]
        })
        .collect();
    table(&header, &body)
}

pub fn loo_csv(rows: &[LooRow]) -> String {
    let header = strings(&["held_out", "seen_auc", "held_out_auc", "gap"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.held_out.clone(), num(r.seen_auc), num(r.held_out_auc), num(r.gap)])
        .collect();
    table(&header, &body)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl ExperimentReport {
    /// Writes the CSV tables, `summary.json`, one ROC CSV per sweep row and, when asked,
    /// an SVG of the sweep.
    pub fn write(&self, dir: impl AsRef<Path>, svg: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("quality.csv"), &quality_csv(&self.quality))?;
        write(&dir.join("survival.csv"), &survival_csv(&self.survival))?;
        write(&dir.join("detection.csv"), &detection_csv(&self.detection, &self.target_fprs))?;
        write(&dir.join("robustness.csv"), &robustness_csv(&self.robustness))?;
        if !self.loo.is_empty() {
            write(&dir.join("loo.csv"), &loo_csv(&self.loo))?;
        }
        let summary = serde_json::to_string_pretty(&self.summary)? + "\n";
        write(&dir.join("summary.json"), &summary)?;
        if !self.robustness.is_empty() {
            let roc_dir = dir.join("roc");
            std::fs::create_dir_all(&roc_dir).map_err(|e| Error::io(&roc_dir, e))?;
            for (i, r) in self.robustness.iter().enumerate() {
                write_roc_csv(&r.curve, roc_dir.join(format!("{i:02}-{}.csv", r.family)))?;
            }
            if svg {
                let curves: Vec<(String, &RocCurve)> = self
                    .robustness
                    .iter()
                    .map(|r| (format!("{} (AUC {:.3})", r.transform, r.auc), &r.curve))
                    .collect();
                write(
                    &dir.join("robustness.svg"),
                    &roc_svg(&curves, "Detection under post-processing"),
                )?;
            }
        }
        Ok(())
    }
}
