use std::path::Path;

use wmforensics::detector::DetectorModel;
use wmforensics::harness::{build_dataset, evaluate, BenchConfig, Dataset, ImageSource, Split, Variant};
use wmforensics::metrics::read_operating_points;
use wmforensics::verify::{verify_default, Outcome};

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn noise_bench_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = BenchConfig::desk(21);
    cfg.dataset.source = ImageSource::Synth {
        count: 60,
        height: 256,
        width: 256,
    };
    cfg.dataset.attacks = vec!["gaussian_noise(sigma=0.08)".parse().unwrap()];
    cfg.robustness = false;
    let ds = build_dataset(&cfg.dataset, tmp.path().join("dataset")).unwrap();
    let report = evaluate(&ds, &cfg, tmp.path().join("r1")).unwrap();

    let row = report.detection.iter().find(|r| r.attack.starts_with("gaussian_noise")).unwrap();
    assert!(row.auc.unwrap() >= 0.95, "{row:?}");
    let clean = report.survival.iter().find(|r| r.attack == "none").unwrap();
    assert!(clean.bit_accuracy.unwrap() >= 0.999 && clean.asr.unwrap() <= 0.001, "{clean:?}");

    // Regenerating from the same dataset is bit-identical.
    evaluate(&ds, &cfg, tmp.path().join("r2")).unwrap();
    assert_eq!(read_dir_bytes(&tmp.path().join("r1")), read_dir_bytes(&tmp.path().join("r2")));

    // Feeding the model's own scores back as an external file reproduces the detection table.
    let mut ext = cfg.clone();
    ext.external_scores = Some(tmp.path().join("r1/scores.csv"));
    let external = evaluate(&ds, &ext, tmp.path().join("r3")).unwrap();
    assert_eq!(external.detection, report.detection);
    assert_eq!(external.summary.score_source, "external");

    verify_on_test_split(&ds, &tmp.path().join("r1"));
}

fn verify_on_test_split(ds: &Dataset, report_dir: &Path) {
    let model = DetectorModel::load(report_dir.join("detector.json")).unwrap();
    let ops = read_operating_points(report_dir.join("operating_points.json")).unwrap();
    let op = ops.iter().find(|p| p.target_fpr == 1e-2).unwrap();
    let (mut attacked, mut flagged) = (0, 0);
    for e in ds.manifest.entries.iter().filter(|e| e.split == Split::Test) {
        let Some(key) = ds.key_for(e).unwrap() else { continue };
        let msg = wmforensics::stats::BitMessage::from_hex(e.message.as_deref().unwrap(), key.n_bits()).unwrap();
        let v = verify_default(&ds.load(e).unwrap(), &key, &msg, &model, op).unwrap();
        match e.variant {
            Variant::Watermarked => assert_eq!(v.outcome, Outcome::Watermarked, "{}", e.image_id),
            Variant::Attacked => {
                attacked += 1;
                flagged += op.flags(v.detector_score) as usize;
            }
            Variant::Original => {}
        }
    }
    // Most attacked images would be flagged by the forensic check on its own.
    assert!(attacked > 0 && 2 * flagged > attacked, "{flagged}/{attacked}");
}
