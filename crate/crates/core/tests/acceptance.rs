//! Acceptance gate. Runs every criterion, prints one line each, exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wmforensics::attacks::AttackSpec;
use wmforensics::detector::{DetectorModel, FEATURE_DIM};
use wmforensics::harness::{
    analyze_dataset, build_dataset, run_bench, run_loo, BenchConfig, ExperimentReport, ImageSource,
};
use wmforensics::imaging::{synth_image, SynthKind};
use wmforensics::metrics::{auc, calibrate, roc_from_scores, OperatingPoint, Psnr};
use wmforensics::stats::{asr, bit_accuracy, reg_inc_beta, rho_value, BitMessage};
use wmforensics::verify::{verify_default, Outcome};
use wmforensics::watermark::{decode, embed, keygen};
use wmforensics::{Error, Image};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn binomial_tail(n: usize, k: usize) -> f64 {
    let mut c = BigUint::one();
    let mut sum = BigUint::zero();
    for j in 0..=n {
        if j >= k {
            sum += &c;
        }
        c = c * BigUint::from(n - j) / BigUint::from(j + 1);
    }
    // At most 2^32, so the conversion and the power-of-two division are exact.
    sum.to_f64().unwrap() / 2f64.powi(n as i32)
}

fn c1() -> Check {
    let mut worst = 0.0f64;
    for n in 1..=32usize {
        for j in 0..=n {
            let p = j as f64 / n as f64;
            let got = rho_value(n, p).map_err(|e| e.to_string())?.value;
            let want = binomial_tail(n, j);
            let rel = (got - want).abs() / want;
            worst = worst.max(rel);
            ensure(rel <= 1e-12, || format!("n={n} j={j}: {got} vs {want}"))?;
        }
    }
    let r: f64 = rho_value(256, 1.0).map_err(|e| e.to_string())?.value;
    let log_rel = (r.ln() - (-256.0 * 2f64.ln())).abs() / (256.0 * 2f64.ln());
    ensure(log_rel <= 1e-9, || format!("rho(256, 1) = {r:e}"))?;
    Ok(format!("worst relative error {worst:.1e}, rho(256,1) log-error {log_rel:.1e}"))
}

fn c2() -> Check {
    let mut worst = 0.0f64;
    let mut track = |name: &str, got: f64, want: f64| -> Result<(), String> {
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("{name}: {got} vs {want}"))
    };
    for i in 0..100 {
        let x = (i as f64 + 0.5) / 100.0;
        let a = 0.25 + 0.5 * i as f64;
        let b = 0.5 + 0.37 * ((i * 7) % 100) as f64;
        track("I_x(1,1)", reg_inc_beta(x, 1.0, 1.0).unwrap(), x)?;
        track("I_0.5(a,a)", reg_inc_beta(0.5, a, a).unwrap(), 0.5)?;
        let s = reg_inc_beta(x, a, b).unwrap() + reg_inc_beta(1.0 - x, b, a).unwrap();
        track("symmetry", s, 1.0)?;
    }
    Ok(format!("300 identities, worst error {worst:.1e}"))
}

struct Roundtrip {
    accuracies: Vec<f64>,
    rhos: Vec<wmforensics::RhoValue>,
    psnr_misses: usize,
    psnr_checked: usize,
}

fn roundtrip_100() -> Result<Roundtrip, String> {
    let mut out = Roundtrip {
        accuracies: Vec::new(),
        rhos: Vec::new(),
        psnr_misses: 0,
        psnr_checked: 0,
    };
    for seed in 0..100u64 {
        let kind = SynthKind::ALL[seed as usize % 3];
        let img: Image = synth_image(1000 + seed, 256, 256, kind).map_err(|e| e.to_string())?;
        let key = keygen(seed, 64, 128, 256, 256).map_err(|e| e.to_string())?;
        let msg = BitMessage::random(&mut ChaCha8Rng::seed_from_u64(seed), 64).unwrap();
        let res = embed(&img, &msg, &key, 40.0).map_err(|e| e.to_string())?;
        let marked = res.image.quantize_8bit();
        let acc = bit_accuracy(&msg, &decode(&marked, &key).unwrap()).unwrap();
        out.accuracies.push(acc);
        out.rhos.push(rho_value(64, acc).unwrap());
        if res.clipped_fraction < 0.01 {
            out.psnr_checked += 1;
            let Psnr::Finite(p) = res.achieved_psnr else {
                return Err(format!("seed {seed}: infinite PSNR"));
            };
            if (p - 40.0).abs() > 0.5 {
                out.psnr_misses += 1;
            }
        }
    }
    Ok(out)
}

fn c3(r: &Roundtrip) -> Check {
    let perfect = r.accuracies.iter().filter(|&&a| a == 1.0).count();
    ensure(perfect == 100, || format!("{perfect}/100 images decoded perfectly"))?;
    ensure(r.psnr_misses == 0, || {
        format!("{} of {} unclipped images off target by > 0.5 dB", r.psnr_misses, r.psnr_checked)
    })?;
    Ok(format!("100/100 perfect, PSNR within 0.5 dB on {}/{} unclipped", r.psnr_checked, r.psnr_checked))
}

fn c4(r: &Roundtrip) -> Check {
    let a = asr(&r.rhos, 1e-6).map_err(|e| e.to_string())?;
    ensure(a <= 0.01, || format!("ASR {a}"))?;
    Ok(format!("ASR {a:.3}"))
}

fn single_attack_bench(seed: u64, attack: &str, robustness: bool, out: &Path) -> Result<ExperimentReport, String> {
    let mut cfg = BenchConfig::desk(seed);
    cfg.dataset.source = ImageSource::Synth {
        count: 200,
        height: 256,
        width: 256,
    };
    cfg.dataset.attacks = vec![attack.parse().map_err(|e: Error| e.to_string())?];
    cfg.robustness = robustness;
    run_bench(&cfg, out).map_err(|e| e.to_string())
}

fn attack_cells(report: &ExperimentReport, attack: &str) -> Result<(f64, f64, f64), String> {
    let attack = attack.parse::<AttackSpec>().map_err(|e| e.to_string())?.to_string();
    let surv = report
        .survival
        .iter()
        .find(|r| r.attack == attack)
        .ok_or("no survival row")?;
    let det = report
        .detection
        .iter()
        .find(|r| r.attack == attack)
        .ok_or("no detection row")?;
    let asr = surv.asr.ok_or("ASR cell absent")?;
    let auc = det.auc.ok_or("AUC cell absent")?;
    let tpr = det.tpr.first().copied().flatten().ok_or("TPR@1e-2 cell absent")?;
    Ok((asr, auc, tpr))
}

fn c5(report: &ExperimentReport) -> Check {
    let (asr, auc, tpr) = attack_cells(report, "gaussian_noise(sigma=0.1)")?;
    let line = format!("ASR {asr:.3}, AUC {auc:.3}, TPR@1e-2 {tpr:.3}");
    ensure(asr >= 0.9 && auc >= 0.95 && tpr >= 0.9, || line.clone())?;
    Ok(line)
}

fn c6(report: &ExperimentReport) -> Check {
    let (_, auc, tpr) = attack_cells(report, "identity")?;
    let line = format!("AUC {auc:.3}, TPR@1e-2 {tpr:.3}");
    ensure((0.4..=0.6).contains(&auc) && tpr <= 0.05, || line.clone())?;
    Ok(line)
}

fn mann_whitney(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for p in pos {
        for n in neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

fn c7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sets = 0usize;
    for size in 2..=12usize {
        // Coarse values force ties.
        let scores: Vec<f64> = (0..size).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        for mask in 1..(1u32 << size) - 1 {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for (i, &s) in scores.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    pos.push(s);
                } else {
                    neg.push(s);
                }
            }
            let a = auc(&roc_from_scores(&pos, &neg).unwrap());
            let mw = mann_whitney(&pos, &neg);
            ensure(a == mw, || format!("size {size} mask {mask:b}: {a} vs {mw}"))?;
            sets += 1;
        }
    }
    for t in 0..50 {
        let pos: Vec<f64> = (0..20).map(|_| rng.random::<f64>() + 0.2).collect();
        let neg: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let base = auc(&roc_from_scores(&pos, &neg).unwrap());
        let f = |x: &f64| (3.0 * x).exp() + x.powi(3);
        let pos2: Vec<f64> = pos.iter().map(f).collect();
        let neg2: Vec<f64> = neg.iter().map(f).collect();
        let moved = auc(&roc_from_scores(&pos2, &neg2).unwrap());
        ensure(base == moved, || format!("set {t}: {base} vs {moved}"))?;
    }
    Ok(format!("{sets} exhaustive labelings exact, 50 monotone transforms invariant"))
}

fn c8() -> Check {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let neg: Vec<f64> = (0..1000)
            .map(|_| {
                // Coarse scores in about half the runs, to exercise ties.
                let s: f64 = rng.random();
                if seed % 2 == 0 {
                    (s * 50.0).floor() / 50.0
                } else {
                    s
                }
            })
            .collect();
        let loose = calibrate(&neg, 1e-1).map_err(|e| e.to_string())?;
        let tight = calibrate(&neg, 1e-2).map_err(|e| e.to_string())?;
        for op in [&loose, &tight] {
            let fpr = neg.iter().filter(|&&s| op.flags(s)).count() as f64 / neg.len() as f64;
            ensure(fpr <= op.target_fpr && fpr == op.empirical_fpr, || {
                format!("seed {seed}: FPR {fpr} at target {}", op.target_fpr)
            })?;
        }
        ensure(tight.threshold >= loose.threshold, || format!("seed {seed}: thresholds out of order"))?;
    }
    let neg = vec![0.1; 500];
    match calibrate(&neg, 1e-3) {
        Err(Error::InsufficientNegatives { .. }) => {}
        other => return Err(format!("1e-3 on 500 negatives gave {other:?}")),
    }
    Ok("50 seeds within target, thresholds ordered, 1e-3 on 500 rejected".into())
}

fn c9(report: &ExperimentReport) -> Check {
    let rows = &report.robustness;
    ensure(rows.len() == 13, || format!("{} sweep rows", rows.len()))?;
    ensure(rows[0].transform == "none", || "baseline row missing".into())?;
    let mut families: Vec<&str> = rows[1..].iter().map(|r| r.family.as_str()).collect();
    families.sort();
    families.dedup();
    ensure(families.len() == 4, || format!("families {families:?}"))?;
    for f in &families {
        let n = rows[1..].iter().filter(|r| r.family == *f).count();
        ensure(n == 3, || format!("{f}: {n} severities"))?;
    }
    let noise = |s: f64| {
        rows.iter()
            .find(|r| r.family == "gaussian_noise" && r.severity == Some(s))
            .map(|r| r.auc)
            .ok_or(format!("no noise row at {s}"))
    };
    let (lo, hi) = (noise(0.02)?, noise(0.10)?);
    ensure(hi <= lo, || format!("AUC at 0.10 {hi:.3} > at 0.02 {lo:.3}"))?;
    Ok(format!("13 curves, noise AUC 0.02 -> {lo:.3}, 0.10 -> {hi:.3}"))
}

fn c10(dir: &Path) -> Check {
    let mut cfg = BenchConfig::desk(10);
    cfg.dataset.source = ImageSource::Synth {
        count: 100,
        height: 256,
        width: 256,
    };
    cfg.dataset.calibration = None;
    cfg.dataset.attacks = [
        "gaussian_noise(sigma=0.1)",
        "gaussian_blur(radius=2)",
        "jpeg_like(quality=50)",
        "median_denoise(window=5)",
    ]
    .iter()
    .map(|a| a.parse::<AttackSpec>().unwrap())
    .collect();
    let ds = build_dataset(&cfg.dataset, dir).map_err(|e| e.to_string())?;
    let run = || -> Result<_, String> {
        let analyses =
            analyze_dataset(&ds, cfg.train.seed, cfg.train.augment_probability).map_err(|e| e.to_string())?;
        run_loo(&ds, &analyses, &cfg.train).map_err(|e| e.to_string())
    };
    let first = run()?;
    let second = run()?;
    ensure(first == second, || "two runs disagree".into())?;
    ensure(first.len() == 4, || format!("{} rows", first.len()))?;
    let seen: Vec<f64> = first.iter().map(|r| r.seen_auc.unwrap()).collect();
    let held: Vec<f64> = first.iter().map(|r| r.held_out_auc.unwrap()).collect();
    let (ms, mh) = (seen.iter().sum::<f64>() / 4.0, held.iter().sum::<f64>() / 4.0);
    ensure(ms >= mh, || format!("mean seen {ms:.3} < mean held-out {mh:.3}"))?;
    Ok(format!("mean seen {ms:.3}, held-out {mh:.3}, gap {:+.4}, repeat identical", ms - mh))
}

fn c11() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hosts: Vec<Image> = (0..12)
        .map(|i| synth_image(500 + i, 128, 128, SynthKind::ALL[i as usize % 3]).unwrap())
        .collect();
    let key = keygen(3, 24, 64, 128, 128).map_err(|e| e.to_string())?;
    let (mut low_rho, mut trials) = (0usize, 0usize);
    for t in 0..1000 {
        let host = &hosts[t % hosts.len()];
        let msg = BitMessage::random(&mut rng, 24).unwrap();
        // Strengths from clearly present to absent.
        let psnr = rng.random_range(25.0..75.0);
        let img = embed(host, &msg, &key, psnr).unwrap().image;
        let mut model = DetectorModel::zero();
        model.weights = (0..FEATURE_DIM).map(|_| rng.random_range(-5.0..5.0)).collect();
        model.bias = rng.random_range(-30.0..30.0);
        let op = OperatingPoint {
            target_fpr: 0.01,
            threshold: rng.random_range(0.0..1.0),
            empirical_fpr: 0.0,
            calibration_set_size: 100,
        };
        let v = verify_default(&img, &key, &msg, &model, &op).map_err(|e| e.to_string())?;
        trials += 1;
        if v.rho.value <= 1e-6 {
            low_rho += 1;
            ensure(v.outcome == Outcome::Watermarked, || {
                format!("trial {t}: rho {:e} gave {:?}", v.rho.value, v.outcome)
            })?;
        } else {
            ensure(v.outcome != Outcome::Watermarked, || format!("trial {t}: rho {:e} Watermarked", v.rho.value))?;
        }
    }
    ensure(low_rho > 100 && low_rho < trials - 100, || format!("only {low_rho} low-rho trials"))?;
    Ok(format!("{trials} trials, {low_rho} with rho <= 1e-6, all Watermarked"))
}

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c12(dir: &Path) -> Check {
    let mut cfg = BenchConfig::desk(12);
    cfg.loo = true;
    cfg.svg = true;
    let (a, b) = (dir.join("a"), dir.join("b"));
    run_bench(&cfg, &a).map_err(|e| e.to_string())?;
    run_bench(&cfg, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    ensure(fa.len() == fb.len(), || format!("{} vs {} files", fa.len(), fb.len()))?;
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        ensure(na == nb && ba == bb, || format!("{na} differs"))?;
    }
    ensure(fa.iter().any(|(n, _)| n.ends_with("manifest.jsonl")), || "no manifest".into())?;
    Ok(format!("{} files byte-identical", fa.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, &str, Check)> = Vec::new();
    let started = Instant::now();

    results.push(("C1", "rho-value oracle", c1()));
    results.push(("C2", "incomplete-beta identities", c2()));
    let rt = roundtrip_100();
    match &rt {
        Ok(r) => {
            results.push(("C3", "watermark roundtrip", c3(r)));
            results.push(("C4", "unattacked ASR", c4(r)));
        }
        Err(e) => {
            results.push(("C3", "watermark roundtrip", Err(e.clone())));
            results.push(("C4", "unattacked ASR", Err(e.clone())));
        }
    }
    let noise = single_attack_bench(5, "gaussian_noise(sigma=0.1)", true, &tmp.path().join("c5"));
    match &noise {
        Ok(r) => {
            results.push(("C5", "removal/detectability trade-off", c5(r)));
        }
        Err(e) => results.push(("C5", "removal/detectability trade-off", Err(e.clone()))),
    }
    let null = single_attack_bench(6, "identity", false, &tmp.path().join("c6"));
    results.push(("C6", "null-attack control", null.and_then(|r| c6(&r))));
    results.push(("C7", "AUC oracle", c7()));
    results.push(("C8", "calibration guarantee", c8()));
    results.push((
        "C9",
        "robustness-sweep structure",
        noise.as_ref().map_err(Clone::clone).and_then(c9),
    ));
    results.push(("C10", "leave-one-attack-out", c10(&tmp.path().join("c10"))));
    results.push(("C11", "two-check precedence", c11()));
    results.push(("C12", "end-to-end determinism", c12(&tmp.path().join("c12"))));

    let mut failed = 0;
    for (id, name, res) in &results {
        match res {
            Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
