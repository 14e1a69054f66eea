use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use wmforensics::attacks::{apply_attack, compute_residual_diagnostics, AttackSpec};
use wmforensics::detector::{
    extract_features, read_feature_csv, score, train, write_feature_csv, DetectorModel, FeatureRow, TrainConfig,
};
use wmforensics::digest::{derive_seed, digest_json};
use wmforensics::harness::{
    analyze_dataset, loo_csv, robustness_csv, run_bench, run_loo, run_robustness_sweep, write_score_csv,
    BenchConfig, Dataset, Split, ingest_external_scores,
};
use wmforensics::imaging::{fourier_log_spectrum, load_image, save_image, synth_image, SynthKind};
use wmforensics::metrics::{
    auc, calibrate, psnr, read_operating_points, roc, roc_svg, tpr_at, write_operating_points, write_roc_csv, Label,
    OperatingPoint, Psnr, ScoreRecord,
};
use wmforensics::stats::{bit_accuracy, rho_value, BitMessage, DEFAULT_RHO_THRESHOLD};
use wmforensics::verify::verify;
use wmforensics::watermark::{
    decode, embed, keygen, WatermarkKey, DEFAULT_CHIPS_PER_BIT, DEFAULT_N_BITS, DEFAULT_TARGET_PSNR,
};
use wmforensics::Image;

/// Watermark removal benchmark toolkit.
#[derive(Parser, Serialize)]
#[command(name = "wmf", version)]
struct Cli {
    /// Global seed; every random choice derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-image work. Outputs do not depend on it.
    #[arg(long, global = true)]
    #[serde(skip)]
    jobs: Option<usize>,
    /// Print progress details to stderr.
    #[arg(short, long, global = true)]
    #[serde(skip)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Generate a synthetic image.
    Synth(SynthArgs),
    /// Embed a watermark; writes the image, the key and the message.
    Embed(EmbedArgs),
    /// Decode the payload and, given the expected message, its rho-value.
    Decode(DecodeArgs),
    /// Apply one attack or post-processing transform.
    Attack(AttackArgs),
    /// Extract forensic features to CSV.
    Features(FeaturesArgs),
    /// Train the removal detector on feature CSVs.
    Train(TrainArgs),
    /// Calibrate operating points on negative scores.
    Calibrate(CalibrateArgs),
    /// Score images or feature rows with a trained detector.
    Score(ScoreArgs),
    /// ROC curve, AUC and TPR at fixed FPR from a score CSV.
    Roc(RocArgs),
    /// Build a dataset and write the full report.
    Bench(BenchArgs),
    /// Post-processing robustness sweep on an existing dataset.
    Sweep(SweepArgs),
    /// Leave-one-attack-out evaluation on an existing dataset.
    Loo(LooArgs),
    /// Two-check verification: watermark first, removal traces second.
    Verify(VerifyArgs),
    /// Log-magnitude spectrum of an image or of its residual against an original.
    Spectrum(SpectrumArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "texture")]
    kind: String,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
}

#[derive(Args, Serialize)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key JSON path; defaults to the output path with extension `key.json`.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N_BITS)]
    bits: usize,
    #[arg(long, default_value_t = DEFAULT_CHIPS_PER_BIT)]
    chips: usize,
    #[arg(long, default_value_t = DEFAULT_TARGET_PSNR)]
    psnr: f64,
    /// Payload as hex; drawn from the seed when absent.
    #[arg(long)]
    message: Option<String>,
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    key: PathBuf,
    /// Expected payload as hex; defaults to the `.msg` file next to the key, if any.
    #[arg(long)]
    message: Option<String>,
}

#[derive(Args, Serialize)]
struct AttackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Attack spec, e.g. `gaussian_noise(sigma=0.1)`.
    #[arg(long)]
    attack: String,
    /// Also write the 0.5-centered residual image here.
    #[arg(long)]
    residual: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FeaturesArgs {
    /// Images to featurize, all with `--label`.
    #[arg(long = "in", num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    label: u8,
    /// Featurize every entry of a dataset instead, labelled by variant.
    #[arg(long, conflicts_with = "inputs")]
    dataset: Option<PathBuf>,
    /// Restrict dataset entries to one split.
    #[arg(long, requires = "dataset")]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long = "features", num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training config JSON; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    /// Score CSV; only label-0 rows are used.
    #[arg(long, conflicts_with_all = ["model", "features"])]
    scores: Option<PathBuf>,
    #[arg(long, requires = "features")]
    model: Option<PathBuf>,
    /// Feature CSV; only label-0 rows are used.
    #[arg(long, requires = "model")]
    features: Option<PathBuf>,
    #[arg(long = "target", num_args = 1.., default_values_t = [1e-2])]
    targets: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in", num_args = 1.., conflicts_with = "features")]
    inputs: Vec<PathBuf>,
    /// Label recorded for `--in` images.
    #[arg(long, default_value_t = 0)]
    label: u8,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct RocArgs {
    #[arg(long)]
    scores: PathBuf,
    /// ROC points as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long = "target", num_args = 1.., default_values_t = [1e-2, 1e-3])]
    targets: Vec<f64>,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    /// Bench config JSON; without it the desk configuration at `--seed` is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Serialize)]
struct LooArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Operating point JSON, a single point or a list.
    #[arg(long)]
    op: PathBuf,
    /// Target FPR to pick when `--op` holds several points.
    #[arg(long)]
    target: Option<f64>,
    /// Expected payload as hex; defaults to the `.msg` file next to the key.
    #[arg(long)]
    message: Option<String>,
    #[arg(long, default_value_t = DEFAULT_RHO_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Serialize)]
struct SpectrumArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// With an original, the spectrum of `in - original` is shown.
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    bins: usize,
}

fn load(path: &Path) -> Result<Image> {
    Ok(load_image(path)?)
}

fn message_path(key: &Path) -> PathBuf {
    key.with_extension("msg")
}

fn expected_message(given: Option<&str>, key_path: &Path, key: &WatermarkKey) -> Result<Option<BitMessage>> {
    if let Some(hex) = given {
        return Ok(Some(BitMessage::from_hex(hex.trim(), key.n_bits())?));
    }
    let path = message_path(key_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(BitMessage::from_hex(text.trim(), key.n_bits())?))
}

fn label(bit: u8) -> Result<Label> {
    Label::from_bit(bit).with_context(|| format!("label must be 0 or 1, got {bit}"))
}

fn psnr_json(p: Psnr) -> serde_json::Value {
    match p {
        Psnr::Finite(v) => json!(v),
        Psnr::Infinite => json!("inf"),
    }
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_synth(seed: u64, a: &SynthArgs) -> Result<()> {
    let kind: SynthKind = a.kind.parse()?;
    let img: Image = synth_image(seed, a.height, a.width, kind)?;
    save_image(&img, &a.out)?;
    Ok(())
}

fn cmd_embed(seed: u64, a: &EmbedArgs) -> Result<()> {
    let img = load(&a.input)?;
    let key = keygen(seed, a.bits, a.chips, img.height(), img.width())?;
    let msg = match &a.message {
        Some(hex) => BitMessage::from_hex(hex, a.bits)?,
        None => BitMessage::random(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["message"])), a.bits)?,
    };
    let res = embed(&img, &msg, &key, a.psnr)?;
    save_image(&res.image, &a.out)?;
    let key_path = a.key.clone().unwrap_or_else(|| a.out.with_extension("key.json"));
    key.save(&key_path)?;
    let msg_path = message_path(&key_path);
    std::fs::write(&msg_path, msg.to_hex() + "\n").with_context(|| format!("writing {}", msg_path.display()))?;
    print_json(json!({
        "key": key_path,
        "message": msg.to_hex(),
        "alpha": res.alpha,
        "achieved_psnr": psnr_json(res.achieved_psnr),
        "clipped_fraction": res.clipped_fraction,
    }));
    Ok(())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let img = load(&a.input)?;
    let key = WatermarkKey::load(&a.key)?;
    let decoded = decode(&img, &key)?;
    let mut out = json!({ "message": decoded.to_hex() });
    if let Some(expected) = expected_message(a.message.as_deref(), &a.key, &key)? {
        let acc = bit_accuracy(&expected, &decoded)?;
        out["bit_accuracy"] = json!(acc);
        out["rho"] = json!(rho_value(key.n_bits(), acc)?.value);
    }
    print_json(out);
    Ok(())
}

fn cmd_attack(seed: u64, a: &AttackArgs) -> Result<()> {
    let spec: AttackSpec = a.attack.parse()?;
    let img = load(&a.input)?;
    let attacked = apply_attack(&img, &spec, seed)?;
    save_image(&attacked, &a.out)?;
    let diag = compute_residual_diagnostics(&img, &attacked)?;
    if let Some(path) = &a.residual {
        save_image(&diag.residual, path)?;
    }
    print_json(json!({
        "attack": spec.to_string(),
        "psnr": psnr_json(psnr(&img, &attacked)?),
        "hf_energy_fraction": diag.hf_energy_fraction,
    }));
    Ok(())
}

fn image_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(serde_json::from_value(json!(s)).with_context(|| format!("unknown split `{s}`"))?)
}

fn cmd_features(a: &FeaturesArgs) -> Result<()> {
    use rayon::prelude::*;
    let rows: Vec<FeatureRow> = if let Some(root) = &a.dataset {
        let ds = Dataset::open(root)?;
        let split = a.split.as_deref().map(parse_split).transpose()?;
        ds.manifest
            .entries
            .par_iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| {
                Ok(FeatureRow {
                    image_id: e.path.clone(),
                    label: e.label(),
                    features: extract_features(&ds.load(e)?)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        if a.inputs.is_empty() {
            bail!("give --in images or --dataset");
        }
        let label = label(a.label)?;
        a.inputs
            .par_iter()
            .map(|p| {
                Ok(FeatureRow {
                    image_id: image_id(p),
                    label,
                    features: extract_features(&load(p)?)?,
                })
            })
            .collect::<Result<_>>()?
    };
    write_feature_csv(&rows, &a.out)?;
    eprintln!("{} rows -> {}", rows.len(), a.out.display());
    Ok(())
}

fn train_config(seed: u64, path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    };
    if path.is_none() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(seed: u64, a: &TrainArgs) -> Result<()> {
    let mut cfg = train_config(seed, a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let mut records = Vec::new();
    for path in &a.features {
        records.extend(read_feature_csv(path)?.into_iter().map(|r| (r.features, r.label)));
    }
    let model = train(&records, &cfg)?;
    model.save(&a.out)?;
    eprintln!("trained on {} rows, model digest {}", records.len(), model.digest());
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let negatives: Vec<f64> = match (&a.scores, &a.model, &a.features) {
        (Some(scores), _, _) => ingest_external_scores(scores)?
            .into_iter()
            .filter(|r| r.label == Label::Negative)
            .map(|r| r.score)
            .collect(),
        (None, Some(model), Some(features)) => {
            let model = DetectorModel::load(model)?;
            read_feature_csv(features)?
                .iter()
                .filter(|r| r.label == Label::Negative)
                .map(|r| score(&model, &r.features))
                .collect()
        }
        _ => bail!("give --scores, or --model with --features"),
    };
    let points = a
        .targets
        .iter()
        .map(|&t| calibrate(&negatives, t))
        .collect::<wmforensics::Result<Vec<OperatingPoint>>>()?;
    write_operating_points(&points, &a.out)?;
    for p in &points {
        print_json(json!(p));
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    use rayon::prelude::*;
    let model = DetectorModel::load(&a.model)?;
    let records: Vec<ScoreRecord> = if let Some(f) = &a.features {
        read_feature_csv(f)?
            .iter()
            .map(|r| ScoreRecord::new(r.image_id.clone(), r.label, score(&model, &r.features)))
            .collect::<wmforensics::Result<_>>()?
    } else {
        if a.inputs.is_empty() {
            bail!("give --in images or --features");
        }
        let label = label(a.label)?;
        a.inputs
            .par_iter()
            .map(|p| {
                let s = score(&model, &extract_features(&load(p)?)?);
                Ok(ScoreRecord::new(image_id(p), label, s)?)
            })
            .collect::<Result<_>>()?
    };
    write_score_csv(&records, &a.out)?;
    eprintln!("{} scores -> {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_roc(a: &RocArgs) -> Result<()> {
    let records = ingest_external_scores(&a.scores)?;
    let curve = roc(&records)?;
    let area = auc(&curve);
    if let Some(path) = &a.out {
        write_roc_csv(&curve, path)?;
    }
    if let Some(path) = &a.svg {
        let title = a.scores.display().to_string();
        let svg = roc_svg(&[(format!("AUC {area:.3}"), &curve)], &title);
        std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    let positives: Vec<f64> = records
        .iter()
        .filter(|r| r.label == Label::Positive)
        .map(|r| r.score)
        .collect();
    let negatives: Vec<f64> = records
        .iter()
        .filter(|r| r.label == Label::Negative)
        .map(|r| r.score)
        .collect();
    let mut tpr = serde_json::Map::new();
    for &t in &a.targets {
        let cell = match calibrate(&negatives, t) {
            Ok(op) => json!(tpr_at(&positives, &op)),
            Err(_) => serde_json::Value::Null,
        };
        tpr.insert(format!("{t:e}"), cell);
    }
    print_json(json!({
        "positives": curve.positives,
        "negatives": curve.negatives,
        "auc": area,
        "tpr_at_fpr": tpr,
    }));
    Ok(())
}

fn cmd_bench(seed: u64, a: &BenchArgs) -> Result<BenchConfig> {
    let cfg = match &a.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::desk(seed),
    };
    Ok(cfg)
}

fn run_bench_cmd(cfg: &BenchConfig, a: &BenchArgs) -> Result<()> {
    let report = run_bench(cfg, &a.out)?;
    for row in &report.detection {
        print_json(json!(row));
    }
    eprintln!("report written to {}", a.out.join("report").display());
    Ok(())
}

fn cmd_sweep(seed: u64, a: &SweepArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let model = DetectorModel::load(&a.model)?;
    let rows = run_robustness_sweep(&ds, &model, seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("robustness.csv"), robustness_csv(&rows))?;
    let roc_dir = a.out.join("roc");
    std::fs::create_dir_all(&roc_dir)?;
    for (i, r) in rows.iter().enumerate() {
        write_roc_csv(&r.curve, roc_dir.join(format!("{i:02}-{}.csv", r.family)))?;
    }
    if a.svg {
        let curves: Vec<(String, _)> = rows
            .iter()
            .map(|r| (format!("{} (AUC {:.3})", r.transform, r.auc), &r.curve))
            .collect();
        std::fs::write(a.out.join("robustness.svg"), roc_svg(&curves, "Detection under post-processing"))?;
    }
    for r in &rows {
        print_json(json!({ "transform": r.transform, "auc": r.auc }));
    }
    Ok(())
}

fn cmd_loo(seed: u64, a: &LooArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let cfg = train_config(seed, a.config.as_deref())?;
    let analyses = analyze_dataset(&ds, cfg.seed, cfg.augment_probability)?;
    let rows = run_loo(&ds, &analyses, &cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("loo.csv"), loo_csv(&rows))?;
    for r in &rows {
        print_json(json!(r));
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let img = load(&a.input)?;
    let key = WatermarkKey::load(&a.key)?;
    let model = DetectorModel::load(&a.model)?;
    let points = read_operating_points(&a.op)?;
    let op = match a.target {
        Some(t) => points
            .iter()
            .find(|p| p.target_fpr == t)
            .with_context(|| format!("no operating point for target {t} in {}", a.op.display()))?,
        None => points.first().context("operating point file is empty")?,
    };
    let msg = expected_message(a.message.as_deref(), &a.key, &key)?.with_context(|| {
        format!(
            "no expected message: pass --message or place it in {}",
            message_path(&a.key).display()
        )
    })?;
    let v = verify(&img, &key, &msg, &model, op, a.threshold)?;
    print_json(json!({
        "outcome": v.outcome,
        "rho": v.rho.value,
        "bit_accuracy": v.rho.bit_accuracy,
        "score": v.detector_score,
        "threshold": v.operating_point.threshold,
    }));
    Ok(())
}

fn cmd_spectrum(a: &SpectrumArgs) -> Result<()> {
    let img = load(&a.input)?;
    let spectrum = match &a.original {
        Some(orig) => compute_residual_diagnostics(&load(orig)?, &img)?.spectrum,
        None => fourier_log_spectrum(&img),
    };
    save_image(&spectrum.to_image(), &a.out)?;
    print_json(json!({ "radial_means": spectrum.radial_means(a.bins) }));
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let seed = cli.seed;
    // Bench digests its resolved config file, not the flags that located it.
    if let Command::Bench(a) = &cli.command {
        let cfg = cmd_bench(seed, a)?;
        eprintln!("config digest: {}", cfg.digest());
        return run_bench_cmd(&cfg, a);
    }
    eprintln!("config digest: {}", digest_json(cli));
    if cli.verbose {
        eprintln!("{}", serde_json::to_string(cli)?);
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(seed, a),
        Command::Embed(a) => cmd_embed(seed, a),
        Command::Decode(a) => cmd_decode(a),
        Command::Attack(a) => cmd_attack(seed, a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(seed, a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Score(a) => cmd_score(a),
        Command::Roc(a) => cmd_roc(a),
        Command::Bench(_) => unreachable!("handled above"),
        Command::Sweep(a) => cmd_sweep(seed, a),
        Command::Loo(a) => cmd_loo(seed, a),
        Command::Verify(a) => cmd_verify(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
