//! Two-stage training: first the filter-estimation and magnitude stages on
//! the magnitude loss, then all three stages on the combined loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_grad, Objective, SaesModel, TrainingExample};
use super::optim::{Adam, AdamConfig};
use crate::dsp::ComplexSpectrogram;
use crate::error::{bad_param, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train on random windows of this many frames, drawn afresh for every
    /// example and epoch. Whole utterances when unset.
    pub crop_frames: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { stage1_epochs: 30, stage2_epochs: 30, batch_size: 2, seed: 0, crop_frames: None, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean magnitude loss per first-stage epoch.
    pub stage1_losses: Vec<f64>,
    /// Mean combined loss per second-stage epoch.
    pub stage2_losses: Vec<f64>,
    /// `(stage, epoch)` at which a non-finite loss or gradient stopped
    /// training; the model holds the parameters from before that epoch.
    pub diverged: Option<(u8, usize)>,
}

/// Mean loss and mean gradient over a batch. Per-example work may run in
/// parallel; the reduction is always in batch order.
fn batch_grad(model: &SaesModel, batch: &[&TrainingExample], objective: Objective) -> Result<(f64, SaesModel)> {
    let results: Vec<Result<(f64, SaesModel)>> = batch.par_iter().map(|ex| loss_and_grad(model, ex, objective)).collect();
    let mut total = 0.0;
    let mut grad = model.zeros_like();
    for r in results {
        let (loss, g) = r?;
        total += loss;
        for (acc, part) in grad.params_mut().into_iter().zip(g.params()) {
            acc.add_assign(part)?;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for t in grad.params_mut() {
        *t = t.scale(scale);
    }
    Ok((total * scale, grad))
}

fn run_stage(
    model: &mut SaesModel,
    data: &[TrainingExample],
    cfg: &TrainConfig,
    objective: Objective,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    losses: &mut Vec<f64>,
) -> Result<Option<usize>> {
    let shapes: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut opt = Adam::new(cfg.adam, &shapes.iter().collect::<Vec<_>>());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        let last_good = model.clone();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut finite = true;
        for chunk in order.chunks(cfg.batch_size) {
            let crops: Vec<TrainingExample> = match cfg.crop_frames {
                Some(n) => chunk.iter().map(|&i| random_crop(&data[i], n, rng)).collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let batch: Vec<&TrainingExample> =
                if crops.is_empty() { chunk.iter().map(|&i| &data[i]).collect() } else { crops.iter().collect() };
            let (loss, grad) = batch_grad(model, &batch, objective)?;
            if !loss.is_finite() || !grad.is_finite() {
                finite = false;
                break;
            }
            total += loss * batch.len() as f64;
            opt.update(model.params_mut(), &grad.params());
        }
        if !finite || !model.is_finite() {
            *model = last_good;
            return Ok(Some(epoch));
        }
        losses.push(total / data.len() as f64);
    }
    Ok(None)
}

fn crop_spec(s: &ComplexSpectrogram, start: usize, len: usize) -> Result<ComplexSpectrogram> {
    let bins = s.bins();
    let cut = |t: &Tensor| Tensor::new(vec![len, bins], t.data()[start * bins..(start + len) * bins].to_vec());
    s.with_planes(cut(&s.real)?, cut(&s.imag)?)
}

/// A window of `len` frames at a random offset; the whole example when it
/// is not longer than that.
pub fn random_crop(ex: &TrainingExample, len: usize, rng: &mut ChaCha8Rng) -> Result<TrainingExample> {
    let frames = ex.y.frames();
    if len == 0 || frames <= len {
        return Ok(ex.clone());
    }
    let start = rng.random_range(0..=frames - len);
    Ok(TrainingExample {
        y: crop_spec(&ex.y, start, len)?,
        x1: crop_spec(&ex.x1, start, len)?,
        x2: crop_spec(&ex.x2, start, len)?,
        s: crop_spec(&ex.s, start, len)?,
    })
}

/// Trains `model` in place. Deterministic for a given seed regardless of
/// thread count.
pub fn train_two_stage(model: &mut SaesModel, data: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return bad_param("training set is empty");
    }
    if cfg.batch_size == 0 {
        return bad_param("batch size must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    if let Some(e) = run_stage(model, data, cfg, Objective::Stage1, cfg.stage1_epochs, &mut rng, &mut report.stage1_losses)? {
        report.diverged = Some((1, e));
        return Ok(report);
    }
    if let Some(e) = run_stage(model, data, cfg, Objective::Stage2, cfg.stage2_epochs, &mut rng, &mut report.stage2_losses)? {
        report.diverged = Some((2, e));
    }
    Ok(report)
}
