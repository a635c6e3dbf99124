//! Dataset synthesis over the condition grid and the on-disk bundle layout:
//! `bundles/<id>/{mic,far1,far2,echo,near,noise}.wav` plus `manifest.toml`,
//! and `dataset.toml` at the dataset root.

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TalkMode};
use crate::dsp::{wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::room::{receiving_room, simulate_rir, transmission_room};
use crate::scenario::{make_mixture, pad_near_end, MixtureBundle, MixtureScenario};
use crate::signals::speech_like;

pub const DATASET_MANIFEST: &str = "dataset.toml";
pub const BUNDLE_MANIFEST: &str = "manifest.toml";
pub const BUNDLES_DIR: &str = "bundles";
/// Peak level bundles are scaled down to when they would clip.
const PEAK_LIMIT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub id: String,
    pub seed: u64,
    pub talk_mode: TalkMode,
    pub room_dims: [f64; 3],
    pub t60: f64,
    pub distance: f64,
    pub transmission_room_dims: [f64; 3],
    pub transmission_t60: f64,
    /// Requested SER; absent for far-end-only bundles.
    pub ser_db: Option<f64>,
    pub snr_db: f64,
    pub measured_ser_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
    pub noise: String,
    /// First sample of the near-end utterance inside the padded signal.
    pub near_offset: usize,
    pub near_len: usize,
    pub samples: usize,
    /// Common gain applied to every component to avoid clipping.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub bundles: Vec<String>,
    pub config: ExperimentConfig,
}

/// Speech and noise material for synthesis.
#[derive(Debug, Clone)]
pub enum Corpus {
    Synthetic,
    Files { near: Vec<Waveform>, far: Vec<Waveform>, noise: Vec<(String, Waveform)> },
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no WAV files in {}", dir.display())));
    }
    Ok(files)
}

impl Corpus {
    /// Loads the configured directories, or the synthetic corpus when none
    /// is configured. Speech and noise directories must be given together.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let missing = cfg.missing_paths();
        if !missing.is_empty() {
            return Err(Error::MissingPaths(missing));
        }
        let c = &cfg.corpus;
        match (&c.near_dir, &c.far_dir, &c.noise_dir) {
            (None, None, None) => Ok(Corpus::Synthetic),
            (Some(n), Some(f), Some(v)) => {
                let read_all = |d: &Path| -> Result<Vec<Waveform>> { wav_files(d)?.iter().map(wav::read).collect() };
                let noise = wav_files(v)?
                    .iter()
                    .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), wav::read(p)?)))
                    .collect::<Result<_>>()?;
                Ok(Corpus::Files { near: read_all(n)?, far: read_all(f)?, noise })
            }
            _ => Err(Error::Config("corpus.near_dir, far_dir and noise_dir must be set together".into())),
        }
    }
}

/// One grid cell instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub room: [f64; 3],
    pub t60: f64,
    pub ser_db: f64,
    pub snr_db: f64,
    pub talk_mode: TalkMode,
}

/// Grid cells in generation order, each repeated `utterances_per_cell` times.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let g = &cfg.grid;
    let mut out = Vec::with_capacity(g.bundle_count());
    for &room in &g.rooms {
        for &t60 in &g.t60s {
            for &ser_db in &g.ser_db {
                for &snr_db in &g.snr_db {
                    for &talk_mode in &g.talk_modes {
                        for _ in 0..g.utterances_per_cell {
                            out.push(Cell { room, t60, ser_db, snr_db, talk_mode });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Independent per-bundle seed (SplitMix64 of the experiment seed and index).
pub fn bundle_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn bundle_id(index: usize) -> String {
    format!("b{index:05}")
}

/// Builds one bundle for `cell`. Deterministic in `(cfg.seed, index)`.
pub fn generate_bundle(cfg: &ExperimentConfig, corpus: &Corpus, cell: &Cell, index: usize) -> Result<(BundleManifest, MixtureBundle)> {
    let seed = bundle_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE;
    let c = &cfg.corpus;
    let g = &cfg.grid;

    let distance = *g.distances.choose(&mut rng).expect("validated");
    let tx_dims = *g.rooms.choose(&mut rng).expect("validated");
    let tx_t60 = *g.t60s.choose(&mut rng).expect("validated");
    let tx = simulate_rir(&transmission_room(tx_dims, tx_t60, distance, rng.random(), fs))?;
    let rx = simulate_rir(&receiving_room(cell.room, cell.t60, distance, fs))?;

    let (far_parts, near_utt, noise_label, noise) = match corpus {
        Corpus::Synthetic => {
            let far: Vec<Waveform> = (0..c.far_utterances).map(|_| speech_like(c.utterance_secs, fs, rng.random())).collect();
            let near = speech_like(c.utterance_secs, fs, rng.random());
            let kind = *c.noise_kinds.choose(&mut rng).expect("validated");
            let len = (c.utterance_secs * c.far_utterances as f64 * fs as f64).round() as usize;
            (far, near, kind.label().to_string(), kind.generate(len, fs, rng.random()))
        }
        Corpus::Files { near, far, noise } => {
            let far: Vec<Waveform> = (0..c.far_utterances).map(|_| far.choose(&mut rng).expect("non-empty").clone()).collect();
            let near = near.choose(&mut rng).expect("non-empty").clone();
            let (label, n) = noise.choose(&mut rng).expect("non-empty");
            (far, near, label.clone(), n.clone())
        }
    };
    let r = Waveform::concat(&far_parts)?;
    let (near, near_offset, near_len, ser_db) = match cell.talk_mode {
        TalkMode::Double => {
            let utt = if near_utt.len() > r.len() { near_utt.with_len(r.len()) } else { near_utt };
            let (padded, offset) = pad_near_end(&utt, r.len(), rng.random())?;
            (padded, offset, utt.len(), Some(cell.ser_db))
        }
        TalkMode::Single => (Waveform::zeros(r.len(), fs), 0, 0, None),
    };
    let sc = MixtureScenario {
        far_end_source: r,
        near_end: near,
        noise,
        transmission_rirs: tx,
        receiving_rirs: rx,
        ser_db,
        snr_db: Some(cell.snr_db),
        seed: rng.random(),
    };
    let mut bundle = make_mixture(&sc)?;
    let peak = [&bundle.mic, &bundle.far1, &bundle.far2, &bundle.echo, &bundle.near, &bundle.noise_scaled]
        .iter()
        .map(|w| w.peak())
        .fold(0.0, f64::max);
    let scale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    if scale != 1.0 {
        bundle = bundle.scaled(scale);
    }
    let manifest = BundleManifest {
        id: bundle_id(index),
        seed,
        talk_mode: cell.talk_mode,
        room_dims: cell.room,
        t60: cell.t60,
        distance,
        transmission_room_dims: tx_dims,
        transmission_t60: tx_t60,
        ser_db,
        snr_db: cell.snr_db,
        measured_ser_db: bundle.measured_ser_db(),
        measured_snr_db: bundle.measured_snr_db(),
        noise: noise_label,
        near_offset,
        near_len,
        samples: bundle.mic.len(),
        scale,
    };
    Ok((manifest, bundle))
}

/// Bundle waveforms as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBundle {
    pub manifest: BundleManifest,
    pub mic: Waveform,
    pub far1: Waveform,
    pub far2: Waveform,
    pub echo: Waveform,
    pub near: Waveform,
    pub noise: Waveform,
}

const PARTS: [&str; 6] = ["mic", "far1", "far2", "echo", "near", "noise"];

pub fn write_bundle(dir: &Path, manifest: &BundleManifest, b: &MixtureBundle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, w) in PARTS.iter().zip([&b.mic, &b.far1, &b.far2, &b.echo, &b.near, &b.noise_scaled]) {
        wav::write(dir.join(format!("{name}.wav")), w)?;
    }
    let text = toml::to_string(manifest).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(dir.join(BUNDLE_MANIFEST), text)?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<StoredBundle> {
    let text = std::fs::read_to_string(dir.join(BUNDLE_MANIFEST))
        .map_err(|e| Error::Data(format!("cannot read bundle manifest in {}: {e}", dir.display())))?;
    let manifest: BundleManifest = toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut w = PARTS.iter().map(|p| wav::read(dir.join(format!("{p}.wav")))).collect::<Result<Vec<_>>>()?;
    if w.iter().any(|x| x.len() != manifest.samples) {
        return Err(Error::Data(format!("bundle {} has components of unexpected length", manifest.id)));
    }
    let noise = w.pop().unwrap();
    let near = w.pop().unwrap();
    let echo = w.pop().unwrap();
    let far2 = w.pop().unwrap();
    let far1 = w.pop().unwrap();
    let mic = w.pop().unwrap();
    Ok(StoredBundle { manifest, mic, far1, far2, echo, near, noise })
}

pub fn read_dataset_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(DATASET_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_dataset(root: &Path) -> Result<(DatasetManifest, Vec<StoredBundle>)> {
    let m = read_dataset_manifest(root)?;
    let bundles = m.bundles.iter().map(|id| read_bundle(&root.join(BUNDLES_DIR).join(id))).collect::<Result<Vec<_>>>()?;
    Ok((m, bundles))
}

/// Synthesises the whole grid into `root`. Results do not depend on the
/// number of worker threads.
pub fn cmd_synth(cfg: &ExperimentConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let corpus = Corpus::load(cfg)?;
    let cells = cells(cfg);
    std::fs::create_dir_all(root.join(BUNDLES_DIR))?;
    let ids = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let (manifest, bundle) = generate_bundle(cfg, &corpus, cell, i)?;
            write_bundle(&root.join(BUNDLES_DIR).join(&manifest.id), &manifest, &bundle)?;
            Ok(manifest.id)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { seed: cfg.seed, bundles: ids, config: cfg.clone() };
    let text = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(root.join(DATASET_MANIFEST), text)?;
    Ok(manifest)
}
