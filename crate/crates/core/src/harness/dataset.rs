use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{apply_attack, AttackSpec};
use crate::digest::{derive_seed, digest_json, sha256_hex};
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image, synth_image, Image, SynthKind};
use crate::metrics::{psnr, Label, Psnr};
use crate::stats::BitMessage;
use crate::watermark::{
    embed, keygen, WatermarkKey, DEFAULT_CHIPS_PER_BIT, DEFAULT_N_BITS, DEFAULT_TARGET_PSNR,
};

pub const DEFAULT_SPLIT_SALT: &str = "wmforensics-split";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_CONFIG_FILE: &str = "dataset.json";
pub const MIN_SOURCE_IMAGES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Extra pristine images held out for threshold calibration only.
    Calibration,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Calibration => "calibration",
        })
    }
}

/// Hash of `image_id ‖ salt` reduced mod 100 into 70/10/20 bands.
pub fn split_for(image_id: &str, salt: &str) -> Split {
    let mut h = Sha256::new();
    h.update(image_id.as_bytes());
    h.update(salt.as_bytes());
    let d = h.finalize();
    let bucket = u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes")) % 100;
    match bucket {
        0..=69 => Split::Train,
        70..=79 => Split::Val,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Watermarked,
    Attacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    pub split: Split,
    pub variant: Variant,
    pub watermarker: Option<String>,
    pub attack: Option<AttackSpec>,
    /// Embedded payload as hex.
    pub message: Option<String>,
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
    pub psnr_vs_original: Psnr,
    pub height: usize,
    pub width: usize,
}

impl ManifestEntry {
    pub fn is_pristine(&self) -> bool {
        self.variant != Variant::Attacked
    }

    /// Forensic label: attacked entries are positives.
    pub fn label(&self) -> Label {
        if self.is_pristine() {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    pub fn watermarker_name(&self) -> &str {
        self.watermarker.as_deref().unwrap_or("none")
    }

    pub fn attack_name(&self) -> String {
        self.attack
            .as_ref()
            .map_or_else(|| "none".to_string(), |a| a.to_string())
    }

    /// Unique within a manifest: `image_id|watermarker|attack`.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}",
            self.image_id,
            self.watermarker_name(),
            self.attack_name()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// SHA-256 of the JSON Lines form.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }

    /// Fails when an image id is assigned to more than one split or an entry key repeats.
    pub fn check_leakage(&self) -> Result<()> {
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        let mut keys = BTreeSet::new();
        for e in &self.entries {
            if let Some(prev) = splits.insert(&e.image_id, e.split) {
                if prev != e.split {
                    return Err(Error::Leakage(format!(
                        "image `{}` appears in both {prev} and {}",
                        e.image_id, e.split
                    )));
                }
            }
            if !keys.insert(e.key()) {
                return Err(Error::Leakage(format!("duplicate entry `{}`", e.key())));
            }
        }
        Ok(())
    }

    /// Pristine share over the benchmark grid; the calibration pool is excluded.
    pub fn pristine_fraction(&self) -> f64 {
        let grid: Vec<&ManifestEntry> = self
            .entries
            .iter()
            .filter(|e| e.split != Split::Calibration)
            .collect();
        if grid.is_empty() {
            return 0.0;
        }
        grid.iter().filter(|e| e.is_pristine()).count() as f64 / grid.len() as f64
    }

    /// Distinct attacks in order of first appearance.
    pub fn attacks(&self) -> Vec<AttackSpec> {
        let mut out: Vec<AttackSpec> = Vec::new();
        for a in self.entries.iter().filter_map(|e| e.attack.as_ref()) {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
        out
    }

    /// Distinct watermarker names in order of first appearance.
    pub fn watermarkers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for w in self.entries.iter().filter_map(|e| e.watermarker.as_ref()) {
            if !out.contains(w) {
                out.push(w.clone());
            }
        }
        out
    }

    /// Number of distinct image ids per split.
    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let ids: BTreeSet<(Split, &str)> = self
            .entries
            .iter()
            .map(|e| (e.split, e.image_id.as_str()))
            .collect();
        let mut counts = BTreeMap::new();
        for (split, _) in ids {
            *counts.entry(split).or_insert(0) += 1;
        }
        counts
    }
}

fn default_n_bits() -> usize {
    DEFAULT_N_BITS
}

fn default_chips() -> usize {
    DEFAULT_CHIPS_PER_BIT
}

fn default_target_psnr() -> f64 {
    DEFAULT_TARGET_PSNR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkerSpec {
    pub name: String,
    pub key_seed: u64,
    #[serde(default = "default_n_bits")]
    pub n_bits: usize,
    #[serde(default = "default_chips")]
    pub chips_per_bit: usize,
    #[serde(default = "default_target_psnr")]
    pub target_psnr: f64,
}

impl WatermarkerSpec {
    pub fn new(name: impl Into<String>, key_seed: u64) -> Self {
        Self {
            name: name.into(),
            key_seed,
            n_bits: DEFAULT_N_BITS,
            chips_per_bit: DEFAULT_CHIPS_PER_BIT,
            target_psnr: DEFAULT_TARGET_PSNR,
        }
    }

    pub fn key_for(&self, height: usize, width: usize) -> Result<WatermarkKey> {
        keygen(self.key_seed, self.n_bits, self.chips_per_bit, height, width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    Synth {
        count: usize,
        height: usize,
        width: usize,
    },
    /// Every `png`, `ppm`, `pgm` or `pnm` file directly inside `path`; ids are file stems.
    Directory { path: PathBuf },
}

fn default_salt() -> String {
    DEFAULT_SPLIT_SALT.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub source: ImageSource,
    /// Pristine pool for threshold calibration. Without one, val-split pristine entries
    /// are used.
    #[serde(default)]
    pub calibration: Option<ImageSource>,
    pub watermarkers: Vec<WatermarkerSpec>,
    pub attacks: Vec<AttackSpec>,
    #[serde(default = "default_salt")]
    pub split_salt: String,
}

impl DatasetConfig {
    /// 100 synthetic 256x256 sources, one watermarker, five removal attacks and a
    /// 60-image calibration pool.
    pub fn desk(seed: u64) -> Self {
        let attacks = [
            "gaussian_noise(sigma=0.1)",
            "gaussian_blur(radius=2)",
            "jpeg_like(quality=50)",
            "median_denoise(window=5)",
            "tv_denoise(weight=0.2,iterations=60)",
        ];
        Self {
            seed,
            source: ImageSource::Synth {
                count: 100,
                height: 256,
                width: 256,
            },
            calibration: Some(ImageSource::Synth {
                count: 60,
                height: 256,
                width: 256,
            }),
            watermarkers: vec![WatermarkerSpec::new("ss64", 1)],
            attacks: attacks
                .iter()
                .map(|a| a.parse().expect("built-in attack specs parse"))
                .collect(),
            split_salt: default_salt(),
        }
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }

    pub fn watermarker(&self, name: &str) -> Option<&WatermarkerSpec> {
        self.watermarkers.iter().find(|w| w.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.watermarkers.is_empty() {
            return Err(Error::Precondition("at least one watermarker is required".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::Precondition("at least one attack is required".into()));
        }
        let mut names = BTreeSet::new();
        for w in &self.watermarkers {
            check_path_safe(&w.name, "watermarker name")?;
            if !names.insert(&w.name) {
                return Err(Error::Precondition(format!(
                    "duplicate watermarker `{}`",
                    w.name
                )));
            }
            if w.target_psnr.is_nan() {
                return Err(Error::Domain(format!("watermarker `{}`: PSNR is NaN", w.name)));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &self.attacks {
            if !seen.insert(a.to_string()) {
                return Err(Error::Precondition(format!("duplicate attack `{a}`")));
            }
        }
        Ok(())
    }
}

fn check_path_safe(s: &str, what: &str) -> Result<()> {
    let ok = !s.is_empty()
        && !s.starts_with('.')
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} `{s}` must be ASCII letters, digits, `-`, `_` or `.`"
        )))
    }
}

#[derive(Debug, Clone)]
enum Origin {
    Synth {
        seed: u64,
        height: usize,
        width: usize,
        kind: SynthKind,
    },
    File(PathBuf),
}

#[derive(Debug, Clone)]
struct SourceItem {
    id: String,
    split: Split,
    origin: Origin,
}

impl SourceItem {
    fn load(&self) -> Result<Image> {
        match &self.origin {
            Origin::Synth {
                seed,
                height,
                width,
                kind,
            } => synth_image(*seed, *height, *width, *kind),
            Origin::File(path) => load_image(path),
        }
        .map_err(|e| e.context(format!("image `{}`", self.id)))
    }
}

fn list_sources(
    source: &ImageSource,
    prefix: &str,
    calibration: bool,
    config: &DatasetConfig,
) -> Result<Vec<SourceItem>> {
    let split = |id: &str| {
        if calibration {
            Split::Calibration
        } else {
            split_for(id, &config.split_salt)
        }
    };
    match source {
        ImageSource::Synth {
            count,
            height,
            width,
        } => Ok((0..*count)
            .map(|i| {
                let id = format!("{prefix}-{i:04}");
                SourceItem {
                    split: split(&id),
                    origin: Origin::Synth {
                        seed: derive_seed(config.seed, &[&id, "synth"]),
                        height: *height,
                        width: *width,
                        kind: SynthKind::ALL[i % SynthKind::ALL.len()],
                    },
                    id,
                }
            })
            .collect()),
        ImageSource::Directory { path } => {
            let read = std::fs::read_dir(path).map_err(|e| Error::UnreadableFile {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let mut files = Vec::new();
            for item in read {
                let p = item.map_err(|e| Error::io(path, e))?.path();
                let ext = p
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase());
                if p.is_file() && matches!(ext.as_deref(), Some("png" | "ppm" | "pgm" | "pnm")) {
                    files.push(p);
                }
            }
            files.sort();
            let mut items = Vec::with_capacity(files.len());
            for f in files {
                let id = f
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::UnreadableFile {
                        path: f.clone(),
                        reason: "file name is not UTF-8".into(),
                    })?
                    .to_string();
                check_path_safe(&id, "image id")?;
                items.push(SourceItem {
                    split: split(&id),
                    id,
                    origin: Origin::File(f),
                });
            }
            Ok(items)
        }
    }
}

/// A built dataset: its root directory, the config that produced it and the manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: DatasetConfig,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let config_path = root.join(DATASET_CONFIG_FILE);
        let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let config: DatasetConfig = serde_json::from_str(&text)?;
        let manifest = DatasetManifest::read(root.join(MANIFEST_FILE))?;
        manifest.check_leakage()?;
        for e in &manifest.entries {
            if e.split != Split::Calibration && e.split != split_for(&e.image_id, &config.split_salt)
            {
                return Err(Error::Leakage(format!(
                    "image `{}` is in {} but hashes to {}",
                    e.image_id,
                    e.split,
                    split_for(&e.image_id, &config.split_salt)
                )));
            }
        }
        Ok(Self {
            root,
            config,
            manifest,
        })
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Image> {
        load_image(self.root.join(&entry.path))
    }

    pub fn key_for(&self, entry: &ManifestEntry) -> Result<Option<WatermarkKey>> {
        let Some(name) = &entry.watermarker else {
            return Ok(None);
        };
        let spec = self
            .config
            .watermarker(name)
            .ok_or_else(|| Error::Precondition(format!("unknown watermarker `{name}`")))?;
        spec.key_for(entry.height, entry.width)
            .map(Some)
            .map_err(|e| e.context(format!("image `{}`", entry.image_id)))
    }
}

/// Builds the full grid under `out_dir`: per source the original, one watermarked variant
/// per watermarker and one attacked variant per (watermarker, attack). Calibration sources
/// get only the pristine variants.
///
/// Every stored image is 8-bit, and every in-memory stage works on the quantized values,
/// so the recorded PSNRs describe the files on disk.
pub fn build_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Dataset> {
    config.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let mut items = list_sources(&config.source, "synth", false, config)?;
    if items.len() < MIN_SOURCE_IMAGES {
        return Err(Error::Precondition(format!(
            "need at least {MIN_SOURCE_IMAGES} source images, found {}",
            items.len()
        )));
    }
    if let Some(cal) = &config.calibration {
        items.extend(list_sources(cal, "calib", true, config)?);
    }
    let mut ids = BTreeSet::new();
    for item in &items {
        if !ids.insert(item.id.as_str()) {
            return Err(Error::Leakage(format!(
                "image id `{}` appears in more than one source",
                item.id
            )));
        }
    }
    let images_dir = root.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let per_item: Vec<Vec<ManifestEntry>> = items
        .par_iter()
        .map(|item| build_item(item, config, &root))
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        entries: per_item.into_iter().flatten().collect(),
    };
    manifest.check_leakage()?;

    let config_path = root.join(DATASET_CONFIG_FILE);
    let json = serde_json::to_string_pretty(config)? + "\n";
    std::fs::write(&config_path, json).map_err(|e| Error::io(&config_path, e))?;
    manifest.write(root.join(MANIFEST_FILE))?;
    Ok(Dataset {
        root,
        config: config.clone(),
        manifest,
    })
}

fn build_item(item: &SourceItem, config: &DatasetConfig, root: &Path) -> Result<Vec<ManifestEntry>> {
    let id = &item.id;
    let original = item.load()?.quantize_8bit();
    let (height, width) = original.dims();
    let dir = root.join("images").join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let store = |img: &Image, name: String| -> Result<String> {
        save_image(img, dir.join(&name))?;
        Ok(format!("images/{id}/{name}"))
    };

    let entry = |variant, watermarker: Option<&str>, attack: Option<&AttackSpec>, message: Option<&BitMessage>, path, psnr| {
        ManifestEntry {
            image_id: id.clone(),
            split: item.split,
            variant,
            watermarker: watermarker.map(str::to_string),
            attack: attack.cloned(),
            message: message.map(BitMessage::to_hex),
            path,
            psnr_vs_original: psnr,
            height,
            width,
        }
    };

    let mut entries = vec![entry(
        Variant::Original,
        None,
        None,
        None,
        store(&original, "original.png".into())?,
        Psnr::Infinite,
    )];
    for wm in &config.watermarkers {
        let key = wm
            .key_for(height, width)
            .map_err(|e| e.context(format!("image `{id}`")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[id, &wm.name, "message"]));
        let message = BitMessage::random(&mut rng, wm.n_bits)?;
        let marked = embed(&original, &message, &key, wm.target_psnr)
            .map_err(|e| e.context(format!("image `{id}`")))?
            .image
            .quantize_8bit();
        entries.push(entry(
            Variant::Watermarked,
            Some(&wm.name),
            None,
            Some(&message),
            store(&marked, format!("{}.png", wm.name))?,
            psnr(&original, &marked)?,
        ));
        if item.split == Split::Calibration {
            continue;
        }
        for (k, attack) in config.attacks.iter().enumerate() {
            let seed = derive_seed(config.seed, &[id, &wm.name, &attack.to_string(), "attack"]);
            let attacked = apply_attack(&marked, attack, seed)
                .map_err(|e| e.context(format!("image `{id}`")))?
                .quantize_8bit();
            entries.push(entry(
                Variant::Attacked,
                Some(&wm.name),
                Some(attack),
                Some(&message),
                store(&attacked, format!("{}-a{k:02}.png", wm.name))?,
                psnr(&original, &attacked)?,
            ));
        }
    }
    Ok(entries)
}
