use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::synth::{read_dataset, StoredBundle};
use crate::baselines::{nlms_cancel, wiener_suppress, NlmsState};
use crate::dsp::{istft_to_len, stft, wav, FrameParams, Waveform};
use crate::error::{Error, Result};
use crate::neural::{checkpoint, Depth, SaesModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    /// Microphone signal unchanged.
    None,
    Nlms,
    Wiener,
    /// Full three-stage network.
    Neural,
    /// Network truncated after the magnitude stage.
    SleSrn,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::None, Algo::Nlms, Algo::Wiener, Algo::Neural, Algo::SleSrn];

    pub fn label(self) -> &'static str {
        match self {
            Algo::None => "none",
            Algo::Nlms => "nlms",
            Algo::Wiener => "wiener",
            Algo::Neural => "neural",
            Algo::SleSrn => "sle-srn",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Algo::Neural | Algo::SleSrn)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}; expected none, nlms, wiener, neural or sle-srn")))
    }
}

/// Near-end estimate for one set of microphone and far-end signals.
pub fn enhance(algo: Algo, mic: &Waveform, far1: &Waveform, far2: &Waveform, cfg: &ExperimentConfig, model: Option<&SaesModel>) -> Result<Waveform> {
    let p = FrameParams::default();
    match algo {
        Algo::None => Ok(mic.clone()),
        Algo::Nlms => Ok(nlms_cancel(mic, far1, far2, NlmsState::new(cfg.nlms)?)?.0),
        Algo::Wiener => {
            let out = wiener_suppress(&stft(mic, &p)?, &stft(far1, &p)?, &stft(far2, &p)?, cfg.wiener)?;
            istft_to_len(&out, mic.len())
        }
        Algo::Neural | Algo::SleSrn => {
            let model = model.ok_or_else(|| Error::Config(format!("algorithm {algo} needs a checkpoint")))?;
            let depth = if algo == Algo::Neural { Depth::Full } else { Depth::Coarse };
            let out = model.enhance(&stft(mic, &p)?, &stft(far1, &p)?, &stft(far2, &p)?, depth)?;
            istft_to_len(&out, mic.len())
        }
    }
}

pub fn enhance_bundle(algo: Algo, b: &StoredBundle, cfg: &ExperimentConfig, model: Option<&SaesModel>) -> Result<Waveform> {
    enhance(algo, &b.mic, &b.far1, &b.far2, cfg, model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub algo: Algo,
    pub files: usize,
}

/// Processes every bundle of the dataset at `root` and writes
/// `out_dir/<algo>/<id>.wav` and `out_dir/<algo>/run.log`.
pub fn cmd_run(cfg: &ExperimentConfig, root: &Path, algo: Algo, checkpoint_dir: Option<&Path>, out_dir: &Path) -> Result<RunSummary> {
    let (_, bundles) = read_dataset(root)?;
    let model = match (algo.needs_model(), checkpoint_dir) {
        (true, Some(dir)) => Some(checkpoint::load(dir)?),
        (true, None) => return Err(Error::Config(format!("algorithm {algo} needs --checkpoint"))),
        (false, _) => None,
    };
    let dir = out_dir.join(algo.label());
    std::fs::create_dir_all(&dir)?;
    let lines = bundles
        .par_iter()
        .map(|b| {
            let start = std::time::Instant::now();
            let out = enhance_bundle(algo, b, cfg, model.as_ref())?;
            if out.len() != b.mic.len() {
                return Err(Error::Data(format!("{}: output length changed", b.manifest.id)));
            }
            wav::write(dir.join(format!("{}.wav", b.manifest.id)), &out)?;
            Ok(format!("{}\t{}\t{} samples\t{:.3} s", b.manifest.id, algo, out.len(), start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut log = format!("# dataset {}\n# algo {algo}\n", root.display());
    for l in &lines {
        log.push_str(l);
        log.push('\n');
    }
    std::fs::write(dir.join("run.log"), log)?;
    Ok(RunSummary { algo, files: lines.len() })
}
