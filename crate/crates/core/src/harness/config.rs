use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{NlmsParams, WienerParams};
use crate::error::{Error, Result};
use crate::neural::{ModelConfig, TrainConfig};
use crate::signals::NoiseKind;

/// Environment variable that replaces `output_dir` when set.
pub const OUTPUT_ROOT_ENV: &str = "SAEC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub grid: GridConfig,
    pub nlms: NlmsParams,
    pub wiener: WienerParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("saec-out"),
            seed: 0,
            corpus: CorpusConfig::default(),
            grid: GridConfig::default(),
            nlms: NlmsParams::default(),
            wiener: WienerParams::default(),
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
        }
    }
}

/// Speech and noise material. Directories of 16 kHz mono WAV files are
/// used when given; otherwise synthetic speech-like signals and generated
/// noise stand in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub near_dir: Option<PathBuf>,
    pub far_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    /// Length of each synthetic utterance.
    pub utterance_secs: f64,
    /// Far-end signals concatenate this many utterances.
    pub far_utterances: usize,
    /// Noise families drawn from when `noise_dir` is unset.
    pub noise_kinds: Vec<NoiseKind>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            near_dir: None,
            far_dir: None,
            noise_dir: None,
            utterance_secs: 1.5,
            far_utterances: 3,
            noise_kinds: vec![NoiseKind::White, NoiseKind::Home, NoiseKind::Babble],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TalkMode {
    /// Near-end speech present (padded, so single-talk stretches remain).
    Double,
    /// Far-end only.
    Single,
}

impl TalkMode {
    pub fn label(self) -> &'static str {
        match self {
            TalkMode::Double => "double",
            TalkMode::Single => "single",
        }
    }
}

/// Condition grid; one cell per room x T60 x SER x SNR x talk mode, with
/// `utterances_per_cell` bundles each. Loudspeaker distance, transmission
/// room and noise are drawn per bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub rooms: Vec<[f64; 3]>,
    pub t60s: Vec<f64>,
    pub distances: Vec<f64>,
    pub ser_db: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub talk_modes: Vec<TalkMode>,
    pub utterances_per_cell: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rooms: vec![[4.0, 3.0, 3.0], [6.0, 4.0, 3.0], [8.0, 7.0, 3.0]],
            t60s: vec![0.3, 0.6, 0.9],
            distances: vec![0.3, 0.7, 1.1],
            ser_db: vec![0.0, 5.0, 10.0, 15.0],
            snr_db: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            talk_modes: vec![TalkMode::Double],
            utterances_per_cell: 1,
        }
    }
}

impl GridConfig {
    pub fn bundle_count(&self) -> usize {
        self.rooms.len() * self.t60s.len() * self.ser_db.len() * self.snr_db.len() * self.talk_modes.len() * self.utterances_per_cell
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Output root after applying the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if g.rooms.is_empty() || g.t60s.is_empty() || g.distances.is_empty() || g.ser_db.is_empty() || g.snr_db.is_empty() || g.talk_modes.is_empty() {
            return fail("every grid axis needs at least one value");
        }
        if g.utterances_per_cell == 0 {
            return fail("grid.utterances_per_cell must be positive");
        }
        if g.rooms.iter().flatten().any(|&d| !(d > 0.0)) || g.t60s.iter().any(|&t| !(t > 0.0)) {
            return fail("room dimensions and T60 values must be positive");
        }
        if g.distances.iter().any(|&d| !(d > 0.0)) {
            return fail("loudspeaker distances must be positive");
        }
        let c = &self.corpus;
        if !(c.utterance_secs > 0.0) || c.far_utterances == 0 {
            return fail("corpus.utterance_secs and corpus.far_utterances must be positive");
        }
        if c.noise_dir.is_none() && c.noise_kinds.is_empty() {
            return fail("corpus.noise_kinds is empty and no noise_dir is given");
        }
        crate::baselines::NlmsState::new(self.nlms).map_err(|e| Error::Config(e.to_string()))?;
        self.wiener.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return fail("train.batch_size must be positive");
        }
        Ok(())
    }

    /// Corpus directories that are configured but missing.
    pub fn missing_paths(&self) -> Vec<PathBuf> {
        [&self.corpus.near_dir, &self.corpus.far_dir, &self.corpus.noise_dir]
            .into_iter()
            .flatten()
            .filter(|p| !p.is_dir())
            .cloned()
            .collect()
    }
}
