use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_attack, robustness_transforms, AttackSpec};
use crate::detector::{augment_with_probability, extract_features, score, train, DetectorModel, FeatureVector, TrainConfig};
use crate::digest::{derive_seed, digest_json};
use crate::error::{Error, Result};
use crate::metrics::{auc, calibrate, roc_from_scores, tpr_at, write_operating_points, Label, OperatingPoint, ScoreRecord};
use crate::stats::{asr, bit_accuracy, rho_value, BitMessage, RhoValue, DEFAULT_RHO_THRESHOLD};
use crate::watermark::decode;

use super::dataset::{build_dataset, Dataset, DatasetConfig, ManifestEntry, Split, Variant};
use super::ingest::{ingest_external_scores, ingest_fid, ingest_lpips, write_score_csv, FidRecord, LpipsRecord};
use super::report::{
    DetectionRow, ExperimentReport, LooRow, OperatingPointSummary, QualityRow, RobustnessRow, Summary, SurvivalRow,
};

/// Per-entry measurements shared by every table.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryAnalysis {
    pub features: FeatureVector,
    /// Features of the augmented copy, for train and val entries.
    pub training_features: Option<FeatureVector>,
    /// Decoding outcome for entries that carry a message.
    pub rho: Option<RhoValue>,
}

/// Loads every entry once, extracting features, decoding watermarks and drawing the
/// training augmentation. The output is in manifest order.
pub fn analyze_dataset(ds: &Dataset, augment_seed: u64, augment_probability: f64) -> Result<Vec<EntryAnalysis>> {
    ds.manifest
        .entries
        .par_iter()
        .map(|e| {
            analyze_entry(ds, e, augment_seed, augment_probability)
                .map_err(|err| err.context(format!("entry `{}`", e.key())))
        })
        .collect()
}

fn analyze_entry(ds: &Dataset, e: &ManifestEntry, augment_seed: u64, p: f64) -> Result<EntryAnalysis> {
    let img = ds.load(e)?;
    let features = extract_features(&img)?;
    let training_features = match e.split {
        Split::Train | Split::Val => {
            let seed = derive_seed(augment_seed, &[&e.key(), "augment"]);
            Some(extract_features(&augment_with_probability(&img, seed, p)?)?)
        }
        _ => None,
    };
    let rho = match (ds.key_for(e)?, &e.message) {
        (Some(key), Some(hex)) => {
            let sent = BitMessage::from_hex(hex, key.n_bits())?;
            let acc = bit_accuracy(&sent, &decode(&img, &key)?)?;
            Some(rho_value(key.n_bits(), acc)?)
        }
        _ => None,
    };
    Ok(EntryAnalysis {
        features,
        training_features,
        rho,
    })
}

/// Trains on the (augmented) entries of `splits`, leaving out attacked entries of
/// `held_out` when given. The calibration pool is never used.
pub fn train_detector(
    ds: &Dataset,
    analyses: &[EntryAnalysis],
    splits: &[Split],
    held_out: Option<&AttackSpec>,
    config: &TrainConfig,
) -> Result<DetectorModel> {
    let records: Vec<(FeatureVector, Label)> = ds
        .manifest
        .entries
        .iter()
        .zip(analyses)
        .filter(|(e, _)| splits.contains(&e.split) && e.split != Split::Calibration)
        .filter(|(e, _)| held_out.is_none() || e.attack.as_ref() != held_out)
        .map(|(e, a)| {
            let fv = a.training_features.clone().unwrap_or_else(|| a.features.clone());
            (fv, e.label())
        })
        .collect();
    train(&records, config)
}

/// Where detector scores come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    Model(&'a DetectorModel),
    /// Records matched to entries by `(image_id, watermarker, attack)`; only records with
    /// transform `none` are used.
    External(&'a [ScoreRecord]),
}

/// Externally computed perceptual metrics to report next to PSNR.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityIngest {
    pub lpips: Vec<LpipsRecord>,
    pub fid: Vec<FidRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTables {
    pub quality: Vec<QualityRow>,
    pub survival: Vec<SurvivalRow>,
    pub detection: Vec<DetectionRow>,
    pub operating_points: Vec<OperatingPointSummary>,
    pub calibration_pool: String,
    pub calibration_negatives: usize,
    /// Every scored entry, in manifest order.
    pub scores: Vec<ScoreRecord>,
    pub unscored_entries: usize,
    pub unmatched_records: usize,
}

fn record_key(image_id: &str, watermarker: &str, attack: &str) -> String {
    format!("{image_id}|{watermarker}|{attack}")
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

fn auc_of(pos: &[f64], neg: &[f64]) -> Result<Option<f64>> {
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    Ok(Some(auc(&roc_from_scores(pos, neg)?)))
}

/// Entries whose negatives set thresholds: the calibration pool when the dataset has one,
/// otherwise val-split pristine entries.
fn calibration_split(ds: &Dataset) -> Split {
    if ds.manifest.entries.iter().any(|e| e.split == Split::Calibration) {
        Split::Calibration
    } else {
        Split::Val
    }
}

/// Fills the quality, survival and detection tables from the test split. Thresholds come
/// from a pristine pool that shares no image with the test split.
pub fn run_benchmark(
    ds: &Dataset,
    analyses: &[EntryAnalysis],
    source: ScoreSource<'_>,
    target_fprs: &[f64],
    quality: &QualityIngest,
) -> Result<BenchmarkTables> {
    let entries = &ds.manifest.entries;
    if analyses.len() != entries.len() {
        return Err(Error::LengthMismatch {
            left: analyses.len(),
            right: entries.len(),
        });
    }
    let (scores, unmatched_records): (Vec<Option<f64>>, usize) = match source {
        ScoreSource::Model(model) => (analyses.iter().map(|a| Some(score(model, &a.features))).collect(), 0),
        ScoreSource::External(records) => {
            let mut by_key = HashMap::new();
            let mut unmatched = 0;
            for r in records.iter().filter(|r| r.transform == "none") {
                by_key.insert(record_key(&r.image_id, &r.watermarker, &r.attack), r.score);
            }
            let scores: Vec<Option<f64>> = entries.iter().map(|e| by_key.get(&e.key()).copied()).collect();
            let keys: HashSet<String> = entries.iter().map(ManifestEntry::key).collect();
            for r in records {
                if !keys.contains(&record_key(&r.image_id, &r.watermarker, &r.attack)) {
                    unmatched += 1;
                }
            }
            (scores, unmatched)
        }
    };

    let cal_split = calibration_split(ds);
    let cal_neg: Vec<f64> = entries
        .iter()
        .zip(&scores)
        .filter(|(e, _)| e.split == cal_split && e.is_pristine())
        .filter_map(|(_, s)| *s)
        .collect();
    let test_ids: HashSet<&str> = entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .map(|e| e.image_id.as_str())
        .collect();
    if let Some(e) = entries
        .iter()
        .find(|e| e.split == cal_split && test_ids.contains(e.image_id.as_str()))
    {
        return Err(Error::Leakage(format!(
            "calibration image `{}` is also a test image",
            e.image_id
        )));
    }
    let mut ops: Vec<Option<OperatingPoint>> = Vec::new();
    let mut op_summaries = Vec::new();
    for &t in target_fprs {
        match calibrate(&cal_neg, t) {
            Ok(op) => {
                ops.push(Some(op));
                op_summaries.push(OperatingPointSummary {
                    target_fpr: t,
                    threshold: Some(op.threshold),
                    empirical_fpr: Some(op.empirical_fpr),
                    note: None,
                });
            }
            Err(e @ Error::InsufficientNegatives { .. }) => {
                ops.push(None);
                op_summaries.push(OperatingPointSummary {
                    target_fpr: t,
                    threshold: None,
                    empirical_fpr: None,
                    note: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let test: Vec<(usize, &ManifestEntry)> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == Split::Test)
        .collect();
    let test_neg: Vec<f64> = test
        .iter()
        .filter(|(_, e)| e.is_pristine())
        .filter_map(|&(i, _)| scores[i])
        .collect();
    let lpips: HashMap<String, f64> = quality
        .lpips
        .iter()
        .map(|r| (record_key(&r.image_id, &r.watermarker, &r.attack), r.lpips))
        .collect();

    let mut quality_rows = Vec::new();
    let mut survival_rows = Vec::new();
    let mut detection_rows = Vec::new();
    for wm in ds.manifest.watermarkers() {
        let mut cells: Vec<(String, Variant, Option<&AttackSpec>)> = vec![("none".into(), Variant::Watermarked, None)];
        let attacks = ds.manifest.attacks();
        for a in &attacks {
            cells.push((a.to_string(), Variant::Attacked, Some(a)));
        }
        for (name, variant, attack) in cells {
            let cell: Vec<usize> = test
                .iter()
                .filter(|(_, e)| {
                    e.variant == variant && e.watermarker.as_deref() == Some(wm.as_str()) && e.attack.as_ref() == attack
                })
                .map(|&(i, _)| i)
                .collect();
            let psnrs: Vec<f64> = cell.iter().filter_map(|&i| entries[i].psnr_vs_original.finite()).collect();
            let lp: Vec<f64> = cell.iter().filter_map(|&i| lpips.get(&entries[i].key()).copied()).collect();
            quality_rows.push(QualityRow {
                watermarker: wm.clone(),
                attack: name.clone(),
                n: cell.len(),
                psnr_mean: mean(&psnrs),
                psnr_std: std_dev(&psnrs),
                lpips_mean: mean(&lp),
                fid: quality
                    .fid
                    .iter()
                    .find(|f| f.watermarker == wm && f.attack == name)
                    .map(|f| f.fid),
            });

            let rhos: Vec<RhoValue> = cell.iter().filter_map(|&i| analyses[i].rho).collect();
            let accs: Vec<f64> = rhos.iter().map(|r| r.bit_accuracy).collect();
            survival_rows.push(SurvivalRow {
                watermarker: wm.clone(),
                attack: name.clone(),
                n: cell.len(),
                psnr_mean: mean(&psnrs),
                bit_accuracy: mean(&accs),
                asr: if rhos.is_empty() {
                    None
                } else {
                    Some(asr(&rhos, DEFAULT_RHO_THRESHOLD)?)
                },
            });

            if variant == Variant::Attacked {
                let pos: Vec<f64> = cell.iter().filter_map(|&i| scores[i]).collect();
                detection_rows.push(DetectionRow {
                    watermarker: wm.clone(),
                    attack: name,
                    n_pos: pos.len(),
                    n_neg: test_neg.len(),
                    auc: auc_of(&pos, &test_neg)?,
                    tpr: ops
                        .iter()
                        .map(|op| op.as_ref().filter(|_| !pos.is_empty()).map(|op| tpr_at(&pos, op)))
                        .collect(),
                });
            }
        }
    }

    let mut records = Vec::new();
    let mut unscored = 0;
    for (e, s) in entries.iter().zip(&scores) {
        match s {
            Some(s) => records.push(
                ScoreRecord::new(&e.image_id, e.label(), *s)?.with_context(e.watermarker_name(), e.attack_name(), "none"),
            ),
            None => unscored += 1,
        }
    }
    Ok(BenchmarkTables {
        quality: quality_rows,
        survival: survival_rows,
        detection: detection_rows,
        operating_points: op_summaries,
        calibration_pool: cal_split.to_string(),
        calibration_negatives: cal_neg.len(),
        scores: records,
        unscored_entries: unscored,
        unmatched_records,
    })
}

/// Re-scores the test split after each post-processing transform, applied to positives and
/// negatives alike. The first row is the untransformed baseline.
pub fn run_robustness_sweep(ds: &Dataset, model: &DetectorModel, seed: u64) -> Result<Vec<RobustnessRow>> {
    let transforms = robustness_transforms();
    let test: Vec<&ManifestEntry> = ds.manifest.entries.iter().filter(|e| e.split == Split::Test).collect();
    let per_entry: Vec<Vec<f64>> = test
        .par_iter()
        .map(|e| -> Result<Vec<f64>> {
            let img = ds.load(e)?;
            let key = e.key();
            let mut out = vec![score(model, &extract_features(&img)?)];
            for t in &transforms {
                let s = derive_seed(seed, &[&key, &t.to_string(), "postprocess"]);
                let transformed = apply_attack(&img, t, s)?.quantize_8bit();
                out.push(score(model, &extract_features(&transformed)?));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(transforms.len() + 1);
    for k in 0..=transforms.len() {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (e, s) in test.iter().zip(&per_entry) {
            if e.is_pristine() {
                neg.push(s[k]);
            } else {
                pos.push(s[k]);
            }
        }
        let curve = roc_from_scores(&pos, &neg)?;
        let (transform, family, severity) = match k {
            0 => ("none".to_string(), "none".to_string(), None),
            _ => {
                let t = &transforms[k - 1];
                (t.to_string(), t.family().to_string(), Some(t.attack().severity()))
            }
        };
        rows.push(RobustnessRow {
            transform,
            family,
            severity,
            auc: auc(&curve),
            curve,
        });
    }
    Ok(rows)
}

/// Leave-one-attack-out: for each attack, trains on train+val without it, then reports
/// test AUC on the remaining attacks and on the held-out one.
pub fn run_loo(ds: &Dataset, analyses: &[EntryAnalysis], config: &TrainConfig) -> Result<Vec<LooRow>> {
    let attacks = ds.manifest.attacks();
    if attacks.len() < 2 {
        return Err(Error::Precondition(format!(
            "leave-one-attack-out needs at least 2 attacks, manifest has {}",
            attacks.len()
        )));
    }
    let entries = &ds.manifest.entries;
    let mut rows = Vec::with_capacity(attacks.len());
    for held in &attacks {
        let model = train_detector(ds, analyses, &[Split::Train, Split::Val], Some(held), config)
            .map_err(|e| e.context(format!("held-out `{held}`")))?;
        let (mut seen, mut unseen, mut neg) = (Vec::new(), Vec::new(), Vec::new());
        for (e, a) in entries.iter().zip(analyses).filter(|(e, _)| e.split == Split::Test) {
            let s = score(&model, &a.features);
            match &e.attack {
                None => neg.push(s),
                Some(x) if x == held => unseen.push(s),
                Some(_) => seen.push(s),
            }
        }
        let seen_auc = auc_of(&seen, &neg)?;
        let held_out_auc = auc_of(&unseen, &neg)?;
        rows.push(LooRow {
            held_out: held.to_string(),
            seen_auc,
            held_out_auc,
            gap: seen_auc.zip(held_out_auc).map(|(s, h)| s - h),
        });
    }
    Ok(rows)
}

fn default_target_fprs() -> Vec<f64> {
    vec![1e-2, 1e-3]
}

fn enabled() -> bool {
    true
}

/// Everything one `bench` run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_target_fprs")]
    pub target_fprs: Vec<f64>,
    #[serde(default = "enabled")]
    pub robustness: bool,
    #[serde(default)]
    pub loo: bool,
    #[serde(default)]
    pub svg: bool,
    /// Score CSV from an external detector; replaces the trained model.
    #[serde(default)]
    pub external_scores: Option<PathBuf>,
    #[serde(default)]
    pub lpips: Option<PathBuf>,
    #[serde(default)]
    pub fid: Option<PathBuf>,
}

impl BenchConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            dataset: DatasetConfig::desk(seed),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            target_fprs: default_target_fprs(),
            robustness: true,
            loo: false,
            svg: false,
            external_scores: None,
            lpips: None,
            fid: None,
        }
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
    }
}

/// Builds the dataset under `out_dir/dataset` and evaluates it into `out_dir/report`.
pub fn run_bench(config: &BenchConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let out_dir = out_dir.as_ref();
    let ds = build_dataset(&config.dataset, out_dir.join("dataset"))?;
    evaluate(&ds, config, out_dir.join("report"))
}

/// Runs every stage enabled in `config` on an existing dataset and writes the report.
/// The dataset section of `config` is only used for the summary digest.
pub fn evaluate(ds: &Dataset, config: &BenchConfig, report_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let report_dir = report_dir.as_ref();
    config.train.validate()?;
    let analyses = analyze_dataset(ds, config.train.seed, config.train.augment_probability)?;
    let external = config.external_scores.as_ref().map(ingest_external_scores).transpose()?;
    let model = match external {
        Some(_) => None,
        None => Some(train_detector(ds, &analyses, &[Split::Train], None, &config.train)?),
    };
    let quality = QualityIngest {
        lpips: config.lpips.as_ref().map(ingest_lpips).transpose()?.unwrap_or_default(),
        fid: config.fid.as_ref().map(ingest_fid).transpose()?.unwrap_or_default(),
    };
    let source = match (&model, &external) {
        (Some(m), _) => ScoreSource::Model(m),
        (None, Some(records)) => ScoreSource::External(records),
        (None, None) => unreachable!("either a model or external scores"),
    };
    let tables = run_benchmark(ds, &analyses, source, &config.target_fprs, &quality)?;
    let robustness = match (&model, config.robustness) {
        (Some(m), true) => run_robustness_sweep(ds, m, config.train.seed)?,
        _ => Vec::new(),
    };
    let loo = if config.loo {
        run_loo(ds, &analyses, &config.train)?
    } else {
        Vec::new()
    };

    let summary = Summary {
        bench_config_digest: config.digest(),
        dataset_config_digest: ds.config.digest(),
        manifest_digest: ds.manifest.digest(),
        dataset_seed: ds.config.seed,
        train_seed: config.train.seed,
        score_source: if model.is_some() { "model" } else { "external" }.into(),
        model_digest: model.as_ref().map(DetectorModel::digest),
        entries: ds.manifest.entries.len(),
        split_ids: ds
            .manifest
            .split_counts()
            .into_iter()
            .map(|(s, n)| (s.to_string(), n))
            .collect::<BTreeMap<_, _>>(),
        pristine_fraction: ds.manifest.pristine_fraction(),
        calibration_pool: tables.calibration_pool.clone(),
        calibration_negatives: tables.calibration_negatives,
        operating_points: tables.operating_points.clone(),
        unscored_entries: tables.unscored_entries,
        unmatched_records: tables.unmatched_records,
        robustness: !robustness.is_empty(),
        loo: !loo.is_empty(),
    };
    let report = ExperimentReport {
        target_fprs: config.target_fprs.clone(),
        quality: tables.quality,
        survival: tables.survival,
        detection: tables.detection,
        robustness,
        loo,
        summary,
    };
    report.write(report_dir, config.svg)?;
    write_score_csv(&tables.scores, report_dir.join("scores.csv"))?;
    if let Some(m) = &model {
        m.save(report_dir.join("detector.json"))?;
    }
    let ops: Vec<OperatingPoint> = tables
        .operating_points
        .iter()
        .filter_map(|o| {
            Some(OperatingPoint {
                target_fpr: o.target_fpr,
                threshold: o.threshold?,
                empirical_fpr: o.empirical_fpr?,
                calibration_set_size: tables.calibration_negatives,
            })
        })
        .collect();
    write_operating_points(&ops, report_dir.join("operating_points.json"))?;
    Ok(report)
}
