use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wmforensics::detector::DetectorModel;
use wmforensics::harness::{BenchConfig, ImageSource};
use wmforensics::imaging::load_image;
use wmforensics::metrics::{write_operating_points, OperatingPoint};
use wmforensics::stats::BitMessage;
use wmforensics::watermark::{decode, WatermarkKey};
use wmforensics::Image;

fn wmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wmf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn last_json(stdout: &str) -> Value {
    serde_json::from_str(stdout.lines().last().expect("some output")).unwrap()
}

#[test]
fn embed_then_verify_is_watermarked() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    ok(&["synth", "--out", p(&a), "--seed", "3"]);
    let embed = last_json(&ok(&[
        "embed", "--in", p(&a), "--out", p(&b), "--seed", "7", "--bits", "64", "--psnr", "40",
    ]));
    let key_path = dir.path().join("b.key.json");
    assert!(key_path.exists());
    assert!(dir.path().join("b.key.msg").exists());
    let psnr = embed["achieved_psnr"].as_f64().unwrap();
    assert!((psnr - 40.0).abs() < 0.5, "{psnr}");

    let model = dir.path().join("m.json");
    DetectorModel::zero().save(&model).unwrap();
    let op = dir.path().join("op.json");
    let point = OperatingPoint {
        target_fpr: 0.01,
        threshold: 0.9,
        empirical_fpr: 0.0,
        calibration_set_size: 200,
    };
    write_operating_points(&[point], &op).unwrap();

    let out = ok(&["verify", "--in", p(&b), "--key", p(&key_path), "--model", p(&model), "--op", p(&op)]);
    assert_eq!(out.lines().count(), 1);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["outcome"], "Watermarked");
    assert_eq!(v["bit_accuracy"], 1.0);
    for field in ["rho", "score", "threshold"] {
        assert!(v[field].is_number(), "{field}");
    }

    // The unmarked original fails the watermark check and the zero model scores 0.5.
    let v = last_json(&ok(&[
        "verify", "--in", p(&a), "--key", p(&key_path), "--model", p(&model), "--op", p(&op),
    ]));
    assert_eq!(v["outcome"], "Clean");
}

#[test]
fn decode_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    let key = dir.path().join("k.json");
    ok(&["synth", "--out", p(&a), "--kind", "shapes", "--seed", "1"]);
    ok(&["embed", "--in", p(&a), "--out", p(&b), "--key", p(&key), "--message", "00ff00ff00ff00ff"]);
    let out = last_json(&ok(&["decode", "--in", p(&b), "--key", p(&key)]));
    let img: Image = load_image(&b).unwrap();
    let lib = decode(&img, &WatermarkKey::load(&key).unwrap()).unwrap();
    assert_eq!(out["message"], lib.to_hex());
    assert_eq!(lib, BitMessage::from_hex("00ff00ff00ff00ff", 64).unwrap());
    assert_eq!(out["bit_accuracy"], 1.0);
}

#[test]
fn exit_codes() {
    let out = wmf(&["embed", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = wmf(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = wmf(&["decode", "--in", "/nonexistent.png", "--key", "/nonexistent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = wmf(&["attack", "--in", "x.png", "--out", "y.png", "--attack", "gaussian_noise(sigma=9)"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(wmf(&["--help"]).status.code(), Some(0));
}

#[test]
fn prints_config_digest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let digest = |seed: &str| {
        let out = wmf(&["synth", "--out", p(&a), "--seed", seed]);
        let err = String::from_utf8(out.stderr).unwrap();
        err.lines()
            .find_map(|l| l.strip_prefix("config digest: ").map(str::to_string))
            .expect("digest line")
    };
    assert_eq!(digest("4"), digest("4"));
    assert_ne!(digest("4"), digest("5"));
    assert_eq!(digest("4").len(), 64);
}

#[test]
fn attack_and_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    let r = dir.path().join("r.png");
    let s = dir.path().join("s.png");
    ok(&["synth", "--out", p(&a), "--height", "128", "--width", "128"]);
    let v = last_json(&ok(&[
        "attack", "--in", p(&a), "--out", p(&b), "--attack", "gaussian_noise(sigma=0.05)", "--residual", p(&r),
    ]));
    assert!(v["hf_energy_fraction"].as_f64().unwrap() > 0.5);
    assert!(r.exists());
    let v = last_json(&ok(&["spectrum", "--in", p(&b), "--original", p(&a), "--out", p(&s), "--bins", "8"]));
    assert_eq!(v["radial_means"].as_array().unwrap().len(), 8);
    let img: Image = load_image(&s).unwrap();
    assert_eq!(img.dims(), (128, 128));
}

#[test]
fn features_train_calibrate_score_roc() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for i in 0..12 {
        let c = d.join(format!("c{i}.png"));
        let n = d.join(format!("n{i}.png"));
        ok(&["synth", "--out", p(&c), "--seed", &i.to_string(), "--height", "64", "--width", "64"]);
        ok(&["attack", "--in", p(&c), "--out", p(&n), "--attack", "gaussian_noise(sigma=0.1)"]);
        clean.push(c);
        noisy.push(n);
    }
    let mut args: Vec<String> = ["features", "--label", "0", "--out", p(&d.join("neg.csv")), "--in"]
        .map(String::from)
        .to_vec();
    args.extend(clean.iter().map(|c| p(c).to_owned()));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let mut args: Vec<String> = ["features", "--label", "1", "--out", p(&d.join("pos.csv")), "--in"]
        .map(String::from)
        .to_vec();
    args.extend(noisy.iter().map(|c| p(c).to_owned()));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let model = d.join("m.json");
    ok(&[
        "train", "--features", p(&d.join("neg.csv")), p(&d.join("pos.csv")), "--out", p(&model), "--epochs", "50",
    ]);
    let ops = ok(&[
        "calibrate", "--model", p(&model), "--features", p(&d.join("neg.csv")), "--target", "0.1", "--out",
        p(&d.join("op.json")),
    ]);
    assert!(last_json(&ops)["empirical_fpr"].as_f64().unwrap() <= 0.1);
    // 1e-2 needs 100 negatives.
    let out = wmf(&[
        "calibrate", "--model", p(&model), "--features", p(&d.join("neg.csv")), "--out", p(&d.join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    for (name, feats) in [("sn.csv", "neg.csv"), ("sp.csv", "pos.csv")] {
        ok(&["score", "--model", p(&model), "--features", p(&d.join(feats)), "--out", p(&d.join(name))]);
    }
    let neg = std::fs::read_to_string(d.join("sn.csv")).unwrap();
    let pos = std::fs::read_to_string(d.join("sp.csv")).unwrap();
    let merged = neg + pos.split_once('\n').unwrap().1;
    std::fs::write(d.join("all.csv"), merged).unwrap();
    let v = last_json(&ok(&["roc", "--scores", p(&d.join("all.csv")), "--out", p(&d.join("roc.csv"))]));
    assert_eq!(v["positives"], 12);
    assert!(v["auc"].as_f64().unwrap() > 0.9, "{v}");
    // Twelve negatives cannot certify 1e-2.
    assert!(v["tpr_at_fpr"]["1e-2"].is_null());
}

#[test]
fn job_count_does_not_change_features() {
    let dir = tempfile::tempdir().unwrap();
    let mut imgs = Vec::new();
    for i in 0..4 {
        let path = dir.path().join(format!("i{i}.png"));
        ok(&["synth", "--out", p(&path), "--seed", &i.to_string(), "--height", "64", "--width", "64"]);
        imgs.push(p(&path).to_owned());
    }
    let run = |jobs: &str, out: &str| {
        let out = dir.path().join(out);
        let mut args = vec!["--jobs", jobs, "features", "--out", p(&out), "--in"];
        args.extend(imgs.iter().map(String::as_str));
        ok(&args);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("1", "a.csv"), run("3", "b.csv"));
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = BenchConfig::desk(2);
    cfg.dataset.source = ImageSource::Synth {
        count: 20,
        height: 128,
        width: 128,
    };
    cfg.dataset.calibration = None;
    cfg.dataset.watermarkers[0].n_bits = 16;
    cfg.dataset.watermarkers[0].chips_per_bit = 64;
    cfg.dataset.attacks.truncate(2);
    cfg.robustness = false;
    let config = dir.path().join("bench.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = dir.path().join("run");
    let res = wmf(&["bench", "--config", p(&config), "--out", p(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains(&format!("config digest: {}", cfg.digest())));
    let report = out.join("report");
    for f in ["quality.csv", "survival.csv", "detection.csv", "robustness.csv", "summary.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
    assert!(out.join("dataset/manifest.jsonl").exists());
}
