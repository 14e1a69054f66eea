//! Dataset construction, experiment orchestration and report emission.

mod benchmark;
mod dataset;
mod ingest;
mod report;

pub use benchmark::{
    analyze_dataset, evaluate, run_bench, run_benchmark, run_loo, run_robustness_sweep, train_detector,
    BenchConfig, BenchmarkTables, EntryAnalysis, QualityIngest, ScoreSource,
};
pub use dataset::{
    build_dataset, split_for, Dataset, DatasetConfig, DatasetManifest, ImageSource, ManifestEntry, Split,
    Variant, WatermarkerSpec, DATASET_CONFIG_FILE, DEFAULT_SPLIT_SALT, MANIFEST_FILE, MIN_SOURCE_IMAGES,
};
pub use ingest::{
    format_score_csv, ingest_external_scores, ingest_fid, ingest_lpips, parse_score_csv, write_score_csv,
    FidRecord, LpipsRecord,
};
pub use report::{
    detection_csv, loo_csv, quality_csv, robustness_csv, survival_csv, DetectionRow, ExperimentReport, LooRow,
    OperatingPointSummary, QualityRow, RobustnessRow, Summary, SurvivalRow, LOW_N,
};
