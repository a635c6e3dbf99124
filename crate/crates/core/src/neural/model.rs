//! Three-stage echo suppression network.
//!
//! 1. Filter estimation: RI planes of `Y, X1, X2` -> `4L` planes read as the
//!    multi-frame filter bank; the linear echo estimate is subtracted from
//!    `Y` to give `Y~`.
//! 2. Magnitude refinement: `|Y|, |X1|, |X2|, |Y~|` -> sigmoid mask `M`;
//!    `|S~| = M * |Y~|`, recombined with the phase of `Y` into the coarse
//!    estimate `S~`.
//! 3. Complex refinement: `S~, Y` RI planes -> two decoders emitting a
//!    residual that is added to `S~`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use super::network::{CrnStage, StageCache, StageConfig};
use crate::dsp::ComplexSpectrogram;
use crate::error::{bad_shape, Error, Result};
use crate::multiframe::{estimate_echo, estimate_echo_grad, subtract_echo, MultiFrameFilterBank, DEFAULT_TAPS};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub bins: usize,
    pub mf_taps: usize,
    /// Initial range multiplier of the filter-bank head.
    pub sle_head_scale: f64,
    /// Same for the residual heads; small values start the refinement
    /// stage close to the identity.
    pub csr_head_scale: f64,
    pub sle: StageConfig,
    pub srn: StageConfig,
    pub csr: StageConfig,
}

impl ModelConfig {
    /// Paper-sized network with every channel count divided by `divisor`.
    pub fn scaled(divisor: usize, bins: usize, mf_taps: usize) -> Self {
        let d = divisor.max(1);
        let enc: Vec<usize> = [8, 16, 32, 64, 128].iter().map(|c| (c / d).max(1)).collect();
        let dec: Vec<usize> = [64, 32, 16, 8].iter().map(|c| (c / d).max(1)).collect();
        let stage = |in_channels, kernel, head: usize, heads| {
            let mut decoder_channels = dec.clone();
            decoder_channels.push(head);
            let mut s = StageConfig {
                in_channels,
                encoder_channels: enc.clone(),
                decoder_channels,
                kernel,
                stride: (1, 2),
                gru_layers: 2,
                gru_hidden: 0,
                output_heads: heads,
                skip: true,
            };
            s.gru_hidden = enc[4] * s.encoder_bins(bins).last().copied().unwrap_or(0);
            s
        };
        Self {
            bins,
            mf_taps,
            sle_head_scale: 0.01,
            csr_head_scale: 0.01,
            sle: stage(6, (3, 3), 4 * mf_taps, 1),
            srn: stage(4, (1, 3), 1, 1),
            csr: stage(4, (1, 3), 1, 2),
        }
    }

    /// Desk-scale default: channel counts divided by four, 161 bins, L = 10.
    pub fn toy() -> Self {
        Self::scaled(4, 161, DEFAULT_TAPS)
    }

    pub fn paper() -> Self {
        Self::scaled(1, 161, DEFAULT_TAPS)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s, inp, heads) in [("sle", &self.sle, 6, 1), ("srn", &self.srn, 4, 1), ("csr", &self.csr, 4, 2)] {
            s.validate(self.bins).map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if s.in_channels != inp || s.output_heads != heads {
                return Err(Error::Config(format!("{name} needs {inp} input planes and {heads} output heads")));
            }
        }
        if self.sle.decoder_channels.last() != Some(&(4 * self.mf_taps)) {
            return Err(Error::Config(format!("sle head must emit 4 * mf_taps = {} planes", 4 * self.mf_taps)));
        }
        if self.srn.decoder_channels.last() != Some(&1) || self.csr.decoder_channels.last() != Some(&1) {
            return Err(Error::Config("srn and csr heads must emit one plane".into()));
        }
        Ok(())
    }
}

/// How far the forward pass runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// Stop after magnitude refinement; the output is the coarse estimate.
    Coarse,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaesModel {
    pub config: ModelConfig,
    pub sle: CrnStage,
    pub srn: CrnStage,
    pub csr: CrnStage,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub bank: MultiFrameFilterBank,
    pub y_tilde: ComplexSpectrogram,
    pub mask: Tensor,
    pub mag_srn: Tensor,
    pub coarse: ComplexSpectrogram,
    pub s_hat: Option<ComplexSpectrogram>,
    x1: ComplexSpectrogram,
    x2: ComplexSpectrogram,
    mag_y_tilde: Tensor,
    cos_y: Tensor,
    sin_y: Tensor,
    sle_cache: StageCache,
    srn_cache: StageCache,
    csr_cache: Option<StageCache>,
}

impl Forward {
    /// Output of the deepest stage that ran.
    pub fn output(&self) -> &ComplexSpectrogram {
        self.s_hat.as_ref().unwrap_or(&self.coarse)
    }
}

fn mag(s: &ComplexSpectrogram) -> Tensor {
    crate::dsp::magnitude(s)
}

fn planes(parts: &[&Tensor]) -> Result<Tensor> {
    Tensor::stack(parts)
}

fn plane(t: &Tensor, c: usize) -> Tensor {
    let (ch, frames, bins) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    debug_assert!(c < ch);
    Tensor::new(vec![frames, bins], t.data()[c * frames * bins..(c + 1) * frames * bins].to_vec()).expect("plane size")
}

impl SaesModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sle = CrnStage::init(&config.sle, config.bins, config.sle_head_scale, &mut rng)?;
        let srn = CrnStage::init(&config.srn, config.bins, 1.0, &mut rng)?;
        let csr = CrnStage::init(&config.csr, config.bins, config.csr_head_scale, &mut rng)?;
        Ok(Self { config, sle, srn, csr })
    }

    pub fn zeros_like(&self) -> Self {
        Self { config: self.config.clone(), sle: self.sle.zeros_like(), srn: self.srn.zeros_like(), csr: self.csr.zeros_like() }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, s) in [("sle", &self.sle), ("srn", &self.srn), ("csr", &self.csr)] {
            out.extend(s.named_params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.sle.params_mut();
        out.extend(self.srn.params_mut());
        out.extend(self.csr.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    pub fn forward(&self, y: &ComplexSpectrogram, x1: &ComplexSpectrogram, x2: &ComplexSpectrogram, depth: Depth) -> Result<Forward> {
        y.check_aligned(x1)?;
        y.check_aligned(x2)?;
        if y.bins() != self.config.bins {
            return bad_shape(format!("model expects {} bins, got {}", self.config.bins, y.bins()));
        }
        let (frames, bins) = y.dims();
        let taps = self.config.mf_taps;

        let sle_in = planes(&[&y.real, &y.imag, &x1.real, &x1.imag, &x2.real, &x2.imag])?;
        let (sle_out, sle_cache) = self.sle.forward(&sle_in)?;
        let n = taps * frames * bins;
        let head = sle_out[0].data();
        let part = |i: usize| Tensor::new(vec![taps, frames, bins], head[i * n..(i + 1) * n].to_vec());
        let bank = MultiFrameFilterBank::new(part(0)?, part(1)?, part(2)?, part(3)?)?;
        let y_tilde = subtract_echo(y, &estimate_echo(&bank, x1, x2)?)?;

        let mag_y = mag(y);
        let mag_y_tilde = mag(&y_tilde);
        let srn_in = planes(&[&mag_y, &mag(x1), &mag(x2), &mag_y_tilde])?;
        let (srn_out, srn_cache) = self.srn.forward(&srn_in)?;
        let mask = plane(&srn_out[0], 0).map(sigmoid);
        let mag_srn = mask.mul(&mag_y_tilde)?;

        let cos_y = y.real.zip_map(&mag_y, |r, m| if m > 0.0 { r / m } else { 1.0 })?;
        let sin_y = y.imag.zip_map(&mag_y, |i, m| if m > 0.0 { i / m } else { 0.0 })?;
        let coarse = y.with_planes(mag_srn.mul(&cos_y)?, mag_srn.mul(&sin_y)?)?;

        let (s_hat, csr_cache) = match depth {
            Depth::Coarse => (None, None),
            Depth::Full => {
                let csr_in = planes(&[&coarse.real, &coarse.imag, &y.real, &y.imag])?;
                let (out, cache) = self.csr.forward(&csr_in)?;
                let s = y.with_planes(plane(&out[0], 0).add(&coarse.real)?, plane(&out[1], 0).add(&coarse.imag)?)?;
                (Some(s), Some(cache))
            }
        };
        Ok(Forward {
            bank,
            y_tilde,
            mask,
            mag_srn,
            coarse,
            s_hat,
            x1: x1.clone(),
            x2: x2.clone(),
            mag_y_tilde,
            cos_y,
            sin_y,
            sle_cache,
            srn_cache,
            csr_cache,
        })
    }

    /// Parameter gradients given the loss gradient with respect to `|S~|`
    /// and, after a full pass, with respect to `S^`.
    pub fn backward(&self, fwd: &Forward, d_mag_srn: &Tensor, d_s_hat: Option<&ComplexSpectrogram>) -> Result<SaesModel> {
        let mut grad = self.zeros_like();
        let (frames, bins) = fwd.y_tilde.dims();
        let mut d_mag = d_mag_srn.clone();

        if let (Some(ds), Some(cache)) = (d_s_hat, &fwd.csr_cache) {
            let douts = [ds.real.clone().reshape(&[1, frames, bins])?, ds.imag.clone().reshape(&[1, frames, bins])?];
            let (g, dx) = self.csr.backward(cache, &douts);
            grad.csr = g;
            let dcr = plane(&dx, 0).add(&ds.real)?;
            let dci = plane(&dx, 1).add(&ds.imag)?;
            d_mag.add_assign(&dcr.mul(&fwd.cos_y)?.add(&dci.mul(&fwd.sin_y)?)?)?;
        }

        let d_mask = d_mag.mul(&fwd.mag_y_tilde)?;
        let mut d_mag_y_tilde = d_mag.mul(&fwd.mask)?;
        let d_logit = d_mask.zip_map(&fwd.mask, |d, m| d * m * (1.0 - m))?;
        let (g, dx) = self.srn.backward(&fwd.srn_cache, &[d_logit.reshape(&[1, frames, bins])?]);
        grad.srn = g;
        d_mag_y_tilde.add_assign(&plane(&dx, 3))?;

        // Y~ = Y - D~, so dD~ = -dY~.
        let yt = &fwd.y_tilde;
        let unit = |p: &Tensor| p.zip_map(&fwd.mag_y_tilde, |v, m| if m > 0.0 { v / m } else { 0.0 });
        let dd_real = d_mag_y_tilde.mul(&unit(&yt.real)?)?.scale(-1.0);
        let dd_imag = d_mag_y_tilde.mul(&unit(&yt.imag)?)?.scale(-1.0);
        let dd = yt.with_planes(dd_real, dd_imag)?;
        let gb = estimate_echo_grad(self.config.mf_taps, &dd, &fwd.x1, &fwd.x2)?;
        let mut head = Vec::with_capacity(4 * gb.h11_r.len());
        for t in gb.channels() {
            head.extend_from_slice(t.data());
        }
        let dhead = Tensor::new(vec![4 * self.config.mf_taps, frames, bins], head)?;
        let (g, _) = self.sle.backward(&fwd.sle_cache, &[dhead]);
        grad.sle = g;
        Ok(grad)
    }

    /// Enhanced spectrum from the deepest requested stage.
    pub fn enhance(&self, y: &ComplexSpectrogram, x1: &ComplexSpectrogram, x2: &ComplexSpectrogram, depth: Depth) -> Result<ComplexSpectrogram> {
        Ok(self.forward(y, x1, x2, depth)?.output().clone())
    }
}

/// Magnitude loss of the first training stage: `mean((|S~| - |S|)^2)`.
pub fn loss_stage1(mag_est: &Tensor, mag_ref: &Tensor) -> Result<f64> {
    let d = mag_est.sub(mag_ref)?;
    Ok(d.sum_sq() / d.len().max(1) as f64)
}

pub fn loss_stage1_grad(mag_est: &Tensor, mag_ref: &Tensor) -> Result<Tensor> {
    let n = mag_est.len().max(1) as f64;
    mag_est.zip_map(mag_ref, |a, b| 2.0 * (a - b) / n)
}

/// Weight of the magnitude loss inside the second-stage objective.
pub const STAGE1_WEIGHT: f64 = 0.1;

/// `0.5 mean(dR^2) + 0.5 mean(dI^2) + 0.1 * stage1_loss`.
pub fn loss_stage2(s_hat: &ComplexSpectrogram, s: &ComplexSpectrogram, stage1_loss: f64) -> Result<f64> {
    s_hat.check_aligned(s)?;
    let n = s.real.len().max(1) as f64;
    let dr = s_hat.real.sub(&s.real)?.sum_sq() / n;
    let di = s_hat.imag.sub(&s.imag)?.sum_sq() / n;
    Ok(0.5 * dr + 0.5 * di + STAGE1_WEIGHT * stage1_loss)
}

/// Gradient of the complex term of [`loss_stage2`] with respect to `S^`.
pub fn loss_stage2_grad(s_hat: &ComplexSpectrogram, s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    let n = s.real.len().max(1) as f64;
    s_hat.with_planes(s_hat.real.sub(&s.real)?.scale(1.0 / n), s_hat.imag.sub(&s.imag)?.scale(1.0 / n))
}

/// One supervised example: microphone, both far-end references and the
/// near-end target, all as aligned spectrograms.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub y: ComplexSpectrogram,
    pub x1: ComplexSpectrogram,
    pub x2: ComplexSpectrogram,
    pub s: ComplexSpectrogram,
}

/// Which objective a gradient evaluation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Stage1,
    Stage2,
}

/// Loss value and parameter gradients for one example.
pub fn loss_and_grad(model: &SaesModel, ex: &TrainingExample, objective: Objective) -> Result<(f64, SaesModel)> {
    let depth = if objective == Objective::Stage1 { Depth::Coarse } else { Depth::Full };
    let fwd = model.forward(&ex.y, &ex.x1, &ex.x2, depth)?;
    let mag_s = mag(&ex.s);
    let l1 = loss_stage1(&fwd.mag_srn, &mag_s)?;
    let g1 = loss_stage1_grad(&fwd.mag_srn, &mag_s)?;
    match objective {
        Objective::Stage1 => Ok((l1, model.backward(&fwd, &g1, None)?)),
        Objective::Stage2 => {
            let s_hat = fwd.s_hat.as_ref().expect("full pass");
            let loss = loss_stage2(s_hat, &ex.s, l1)?;
            let ds = loss_stage2_grad(s_hat, &ex.s)?;
            Ok((loss, model.backward(&fwd, &g1.scale(STAGE1_WEIGHT), Some(&ds))?))
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dsp::FrameParams;
    use rand::Rng;

    pub(crate) fn small_config() -> ModelConfig {
        let mut c = ModelConfig::scaled(8, 17, 2);
        for s in [&mut c.sle, &mut c.srn, &mut c.csr] {
            s.encoder_channels = vec![2, 2];
            let head = *s.decoder_channels.last().unwrap();
            s.decoder_channels = vec![2, head];
            s.gru_hidden = 2 * s.encoder_bins(17)[1];
        }
        c
    }

    fn rand_spec(t: usize, f: usize, rng: &mut ChaCha8Rng) -> ComplexSpectrogram {
        let p = FrameParams { win_len: 2 * (f - 1), hop_len: f - 1, fft_len: 2 * (f - 1), ..FrameParams::default() };
        let mut r = || Tensor::new(vec![t, f], (0..t * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (a, b) = (r(), r());
        ComplexSpectrogram::new(a, b, p, 16_000).unwrap()
    }

    #[test]
    fn toy_shapes() {
        let c = ModelConfig::toy();
        assert_eq!(c.sle.encoder_channels, [2, 4, 8, 16, 32]);
        assert_eq!(c.sle.decoder_channels, [16, 8, 4, 2, 40]);
        assert_eq!(c.sle.gru_hidden, 128);
        assert_eq!(c.sle.kernel, (3, 3));
        assert_eq!(c.srn.kernel, (1, 3));
        c.validate().unwrap();
        let m = SaesModel::init(c, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, x1, x2) = (rand_spec(3, 161, &mut rng), rand_spec(3, 161, &mut rng), rand_spec(3, 161, &mut rng));
        let f = m.forward(&y, &x1, &x2, Depth::Full).unwrap();
        assert_eq!(f.bank.h11_r.shape(), [10, 3, 161]);
        assert_eq!(f.y_tilde.dims(), (3, 161));
        assert_eq!(f.s_hat.unwrap().dims(), (3, 161));
    }

    #[test]
    fn zero_parameters_pass_through() {
        let mut m = SaesModel::init(small_config(), 3).unwrap();
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y, x1, x2) = (rand_spec(5, 17, &mut rng), rand_spec(5, 17, &mut rng), rand_spec(5, 17, &mut rng));
        let f = m.forward(&y, &x1, &x2, Depth::Full).unwrap();
        assert_eq!(f.y_tilde, y);
        assert!(f.mask.data().iter().all(|&v| v == 0.5));
        // zero residual: the output is exactly the coarse estimate
        assert_eq!(f.s_hat.as_ref().unwrap(), &f.coarse);
        assert!(f.coarse.real.max_abs_diff(&y.real.scale(0.5)) < 1e-15);
    }

    #[test]
    fn saturated_mask_bounds() {
        let mut m = SaesModel::init(small_config(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (y, x1, x2) = (rand_spec(4, 17, &mut rng), rand_spec(4, 17, &mut rng), rand_spec(4, 17, &mut rng));
        let last = m.srn.decoders[0].len() - 1;
        m.srn.decoders[0][last].weight.fill(0.0);
        m.srn.decoders[0][last].bias.fill(1000.0);
        let f = m.forward(&y, &x1, &x2, Depth::Coarse).unwrap();
        assert_eq!(f.mag_srn, f.mag_y_tilde);
        m.srn.decoders[0][last].bias.fill(-1000.0);
        let f = m.forward(&y, &x1, &x2, Depth::Coarse).unwrap();
        assert!(f.mag_srn.data().iter().all(|&v| v == 0.0));
        assert!(f.s_hat.is_none());
    }

    #[test]
    fn loss_constants() {
        let two = Tensor::filled(&[3, 4], 2.0);
        assert_eq!(loss_stage1(&two, &two).unwrap(), 0.0);
        assert_eq!(loss_stage1(&two, &Tensor::zeros(&[3, 4])).unwrap(), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = rand_spec(3, 5, &mut rng);
        assert_eq!(loss_stage2(&s, &s, 0.0).unwrap(), 0.0);
        let off = s.with_planes(s.real.map(|v| v + 1.0), s.imag.map(|v| v + 1.0)).unwrap();
        assert!((loss_stage2(&off, &s, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let a = loss_stage2(&off, &s, 0.3).unwrap();
        let b = loss_stage2(&off, &s, 0.6).unwrap();
        assert!((b - a - 0.1 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_rejected() {
        let m = SaesModel::init(small_config(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = rand_spec(4, 17, &mut rng);
        assert!(m.forward(&y, &y, &rand_spec(5, 17, &mut rng), Depth::Full).is_err());
        let z = rand_spec(4, 9, &mut rng);
        assert!(m.forward(&z, &z, &z, Depth::Full).is_err());
        let mut c = small_config();
        c.sle.decoder_channels[1] = 3;
        assert!(matches!(SaesModel::init(c, 1), Err(Error::Config(_))));
    }
}
