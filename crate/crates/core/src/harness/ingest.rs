use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::{Label, ScoreRecord};

const SCORE_COLUMNS: [&str; 6] = ["image_id", "label", "score", "watermarker", "attack", "transform"];

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Malformed {
        line,
        reason: e.to_string(),
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Parses `image_id,label,score[,watermarker,attack,transform]`. Fields holding commas
/// must be quoted.
pub fn parse_score_csv(reader: impl Read) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if header != SCORE_COLUMNS[..3] && header != SCORE_COLUMNS[..] {
        return Err(Error::Malformed {
            line: 1,
            reason: format!("expected header {} (last three optional)", SCORE_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let malformed = |reason: String| Error::Malformed { line, reason };
        let label = row[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_bit)
            .ok_or_else(|| malformed(format!("label must be 0 or 1, got `{}`", &row[1])))?;
        let score: f64 = row[2]
            .parse()
            .map_err(|_| malformed(format!("score is not a number: `{}`", &row[2])))?;
        let mut rec = ScoreRecord::new(&row[0], label, score).map_err(|e| malformed(e.to_string()))?;
        if row.len() == 6 {
            rec = rec.with_context(&row[3], &row[4], &row[5]);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn ingest_external_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_score_csv(open(path)?).map_err(|e| e.context(path.display().to_string()))
}

/// Writes the six-column form read by [`ingest_external_scores`].
pub fn format_score_csv(records: &[ScoreRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORE_COLUMNS).expect("in-memory write");
    for r in records {
        w.write_record([
            r.image_id.as_str(),
            &r.label.as_bit().to_string(),
            &format!("{:.9}", r.score),
            &r.watermarker,
            &r.attack,
            &r.transform,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

pub fn write_score_csv(records: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_score_csv(records)).map_err(|e| Error::io(path, e))
}

/// Externally computed per-image LPIPS for one variant.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LpipsRecord {
    pub image_id: String,
    pub watermarker: String,
    pub attack: String,
    pub lpips: f64,
}

/// Externally computed FID for one (watermarker, variant) set.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FidRecord {
    pub watermarker: String,
    pub attack: String,
    pub fid: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, check: impl Fn(&T) -> bool) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for row in rdr.deserialize::<T>() {
        let row = row.map_err(csv_error)?;
        if !check(&row) {
            return Err(Error::Malformed {
                line: out.len() + 2,
                reason: "value must be finite and non-negative".into(),
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// Reads `image_id,watermarker,attack,lpips`.
pub fn ingest_lpips(path: impl AsRef<Path>) -> Result<Vec<LpipsRecord>> {
    let path = path.as_ref();
    read_rows(path, |r: &LpipsRecord| r.lpips.is_finite() && r.lpips >= 0.0)
        .map_err(|e| e.context(path.display().to_string()))
}

/// Reads `watermarker,attack,fid`.
pub fn ingest_fid(path: impl AsRef<Path>) -> Result<Vec<FidRecord>> {
    let path = path.as_ref();
    read_rows(path, |r: &FidRecord| r.fid.is_finite() && r.fid >= 0.0)
        .map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{auc, roc, roc_from_scores, tpr_at_fpr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_rows() {
        let text = "image_id,label,score\na,1,0.9\nb,0,0.1\nc,0,0.4\n";
        let recs = parse_score_csv(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, Label::Positive);
        assert_eq!(recs[2].attack, "none");
    }

    #[test]
    fn out_of_range_score_reports_line() {
        let text = "image_id,label,score\na,1,0.9\nb,0,1.2\n";
        let err = parse_score_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 3, .. }), "{err}");
        let err = parse_score_csv("image_id,label,score\na,2,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
        assert!(parse_score_csv("id,score\n".as_bytes()).is_err());
        assert!(parse_score_csv("image_id,label,score\na,1\n".as_bytes()).is_err());
    }

    #[test]
    fn quoted_attack_roundtrips() {
        let recs = vec![ScoreRecord::new("x", Label::Positive, 0.25)
            .unwrap()
            .with_context("ss64", "tv_denoise(weight=0.2,iterations=60)", "none")];
        assert_eq!(parse_score_csv(format_score_csv(&recs).as_bytes()).unwrap(), recs);
    }

    #[test]
    fn ingested_scores_match_native_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let recs: Vec<ScoreRecord> = (0..400)
            .map(|i| {
                let label = if i % 3 == 0 { Label::Positive } else { Label::Negative };
                let shift = if label == Label::Positive { 0.3 } else { 0.0 };
                let s = (rng.random::<f64>() * 0.7 + shift).min(1.0);
                // Nine decimals survive the text form exactly.
                let s = (s * 1e9).round() / 1e9;
                ScoreRecord::new(format!("i{i}"), label, s).unwrap()
            })
            .collect();
        let back = parse_score_csv(format_score_csv(&recs).as_bytes()).unwrap();
        assert_eq!(tpr_at_fpr(&back, 0.01).unwrap(), tpr_at_fpr(&recs, 0.01).unwrap());
        let pos: Vec<f64> = recs.iter().filter(|r| r.label == Label::Positive).map(|r| r.score).collect();
        let neg: Vec<f64> = recs.iter().filter(|r| r.label == Label::Negative).map(|r| r.score).collect();
        assert_eq!(auc(&roc(&back).unwrap()), auc(&roc_from_scores(&pos, &neg).unwrap()));
    }

    #[test]
    fn lpips_and_fid_files() {
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("lpips.csv");
        std::fs::write(&lp, "image_id,watermarker,attack,lpips\na,ss64,\"jpeg_like(quality=50)\",0.12\n").unwrap();
        assert_eq!(ingest_lpips(&lp).unwrap()[0].lpips, 0.12);
        let fid = dir.path().join("fid.csv");
        std::fs::write(&fid, "watermarker,attack,fid\nss64,none,3.5\nss64,identity,-1\n").unwrap();
        assert!(ingest_fid(&fid).unwrap_err().to_string().contains("line 3"));
    }
}
