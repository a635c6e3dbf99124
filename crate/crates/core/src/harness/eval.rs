use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::TalkMode;
use super::synth::{read_dataset, StoredBundle};
use crate::dsp::{wav, Waveform};
use crate::error::{Error, Result};
use crate::metrics::{erle_masked, estoi, MetricsReport};
use crate::scenario::{active_mask, ACTIVITY_FRAME, ACTIVITY_RANGE_DB};

/// Samples where the echo is active and the near-end utterance (from the
/// manifest) is absent.
pub fn single_talk_mask(b: &StoredBundle) -> Vec<bool> {
    let far = active_mask(&b.echo, ACTIVITY_FRAME, ACTIVITY_RANGE_DB);
    let (lo, hi) = (b.manifest.near_offset, b.manifest.near_offset + b.manifest.near_len);
    far.into_iter().enumerate().map(|(i, a)| a && (b.manifest.near_len == 0 || i < lo || i >= hi)).collect()
}

/// ERLE over the single-talk samples (when there are any) and ESTOI
/// against the clean near end for double-talk bundles. ESTOI is left empty
/// when the near end has too few active frames to score.
pub fn evaluate(b: &StoredBundle, algo: &str, enhanced: &Waveform) -> Result<MetricsReport> {
    if enhanced.len() != b.mic.len() {
        return Err(Error::Data(format!("{}: enhanced signal has {} samples, expected {}", b.manifest.id, enhanced.len(), b.mic.len())));
    }
    let mask = single_talk_mask(b);
    let erle = if mask.iter().any(|&m| m) { Some(erle_masked(&b.mic, enhanced, &mask)?) } else { None };
    let estoi = match b.manifest.talk_mode {
        TalkMode::Double => match estoi(&b.near, enhanced) {
            Ok(v) => Some(v),
            Err(Error::Data(_)) => None,
            Err(e) => return Err(e),
        },
        TalkMode::Single => None,
    };
    Ok(MetricsReport {
        id: b.manifest.id.clone(),
        mode: b.manifest.talk_mode.label().to_string(),
        noise: b.manifest.noise.clone(),
        snr_db: Some(b.manifest.snr_db),
        ser_db: b.manifest.ser_db,
        algo: algo.to_string(),
        erle_db: erle.map(|e| e.db),
        erle_clamped: erle.is_some_and(|e| e.clamped),
        estoi,
    })
}

/// Mean metrics for one noise x SNR x algorithm group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub noise: String,
    pub snr_db: String,
    pub algo: String,
    pub files: usize,
    pub clamped_files: usize,
    /// Always `n/a`: PESQ is not computed.
    pub pesq: String,
    pub estoi_mean: Option<f64>,
    pub erle_db_mean: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarise(rows: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&MetricsReport>> = BTreeMap::new();
    for r in rows {
        let snr = r.snr_db.map_or("n/a".to_string(), |v| format!("{v}"));
        groups.entry((r.noise.clone(), snr, r.algo.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((noise, snr_db, algo), g)| SummaryRow {
            noise,
            snr_db,
            algo,
            files: g.len(),
            clamped_files: g.iter().filter(|r| r.erle_clamped).count(),
            pesq: "n/a".into(),
            estoi_mean: mean(g.iter().filter_map(|r| r.estoi)),
            erle_db_mean: mean(g.iter().filter_map(|r| r.erle_db)),
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub rows: Vec<MetricsReport>,
    pub summary: Vec<SummaryRow>,
}

/// Evaluates every `<enhanced_dir>/<algo>/<id>.wav` against the dataset
/// and writes `per_file.csv` and `summary.csv` into `out_dir`.
pub fn cmd_eval(root: &Path, enhanced_dir: &Path, out_dir: &Path) -> Result<EvalOutput> {
    let (_, bundles) = read_dataset(root)?;
    let mut algos: Vec<String> = std::fs::read_dir(enhanced_dir)
        .map_err(|e| Error::Data(format!("cannot list {}: {e}", enhanced_dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    algos.sort();
    if algos.is_empty() {
        return Err(Error::Data(format!("no algorithm outputs under {}", enhanced_dir.display())));
    }
    let jobs: Vec<(&String, &StoredBundle)> = algos.iter().flat_map(|a| bundles.iter().map(move |b| (a, b))).collect();
    let rows = jobs
        .par_iter()
        .map(|(algo, b)| {
            let path = enhanced_dir.join(algo).join(format!("{}.wav", b.manifest.id));
            if !path.is_file() {
                return Err(Error::MissingPaths(vec![path]));
            }
            evaluate(b, algo, &wav::read(&path)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarise(&rows);
    std::fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join("per_file.csv"), &rows)?;
    write_csv(&out_dir.join("summary.csv"), &summary)?;
    Ok(EvalOutput { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(noise: &str, snr: f64, algo: &str, erle: Option<f64>, estoi: Option<f64>) -> MetricsReport {
        MetricsReport {
            id: "x".into(),
            mode: "double".into(),
            noise: noise.into(),
            snr_db: Some(snr),
            ser_db: Some(0.0),
            algo: algo.into(),
            erle_db: erle,
            erle_clamped: false,
            estoi,
        }
    }

    #[test]
    fn summary_means_match_hand_averages() {
        let rows = vec![
            row("white", 10.0, "nlms", Some(10.0), Some(0.5)),
            row("white", 10.0, "nlms", Some(20.0), Some(0.7)),
            row("white", 10.0, "nlms", None, Some(0.9)),
            row("home", 10.0, "nlms", Some(3.0), None),
            row("white", 20.0, "nlms", Some(1.0), Some(0.1)),
        ];
        let s = summarise(&rows);
        assert_eq!(s.len(), 3);
        let w10 = s.iter().find(|r| r.noise == "white" && r.snr_db == "10").unwrap();
        assert_eq!(w10.files, 3);
        assert!((w10.erle_db_mean.unwrap() - 15.0).abs() < 1e-12);
        assert!((w10.estoi_mean.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(w10.pesq, "n/a");
        let home = s.iter().find(|r| r.noise == "home").unwrap();
        assert_eq!(home.estoi_mean, None);
    }
}
