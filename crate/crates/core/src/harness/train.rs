use std::fmt::Write as _;
use std::path::Path;

use super::config::ExperimentConfig;
use super::synth::{read_dataset, StoredBundle};
use crate::dsp::{stft, FrameParams};
use crate::error::{Error, Result};
use crate::neural::{checkpoint, train_two_stage, SaesModel, TrainReport, TrainingExample};

/// Spectrogram example with the near-end component as target.
pub fn training_example(b: &StoredBundle) -> Result<TrainingExample> {
    let p = FrameParams::default();
    Ok(TrainingExample { y: stft(&b.mic, &p)?, x1: stft(&b.far1, &p)?, x2: stft(&b.far2, &p)?, s: stft(&b.near, &p)? })
}

/// Long-format loss table: `stage,epoch,loss`.
pub fn loss_csv(report: &TrainReport) -> String {
    let mut s = String::from("stage,epoch,loss\n");
    for (stage, losses) in [(1, &report.stage1_losses), (2, &report.stage2_losses)] {
        for (e, l) in losses.iter().enumerate() {
            writeln!(s, "{stage},{},{l}", e + 1).expect("string write");
        }
    }
    s
}

/// Trains on every bundle of the dataset and writes the checkpoint and
/// `losses.csv` into `checkpoint_dir`. A diverged run still writes the
/// last good parameters before reporting the failure.
pub fn cmd_train(cfg: &ExperimentConfig, root: &Path, checkpoint_dir: &Path) -> Result<TrainReport> {
    let (_, bundles) = read_dataset(root)?;
    let data = bundles.iter().map(training_example).collect::<Result<Vec<_>>>()?;
    let mut model = SaesModel::init(cfg.model.clone(), cfg.seed)?;
    let report = train_two_stage(&mut model, &data, &cfg.train)?;
    checkpoint::save(&model, checkpoint_dir)?;
    std::fs::write(checkpoint_dir.join("losses.csv"), loss_csv(&report))?;
    if let Some((stage, epoch)) = report.diverged {
        return Err(Error::Diverged { stage, epoch });
    }
    Ok(report)
}
