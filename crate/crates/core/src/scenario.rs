//! Microphone mixtures built from the stereo echo signal model
//! `y1 = x1 * h11 + x2 * h12 + s1 + v1`, scaled to a requested
//! signal-to-echo and signal-to-noise ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{bad_param, Error, Result};
use crate::room::{convolve, RirSet};

/// Frame length (samples) used to find active regions.
pub const ACTIVITY_FRAME: usize = 320;
/// Frames within this many dB of the loudest frame count as active.
pub const ACTIVITY_RANGE_DB: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct MixtureScenario {
    /// Common far-end source `r`.
    pub far_end_source: Waveform,
    /// Near-end speech `s1`, already padded to the far-end length.
    pub near_end: Waveform,
    /// Noise `v1`; tiled or cropped to length from a seeded offset.
    pub noise: Waveform,
    /// Transmission room: one talker, two pickups (`g1`, `g2`).
    pub transmission_rirs: RirSet,
    /// Receiving room: two loudspeakers, microphone 0 is `y1` (`h11`, `h12`).
    pub receiving_rirs: RirSet,
    /// `None` leaves the near end unscaled (single-talk).
    pub ser_db: Option<f64>,
    /// `None` leaves the noise unscaled.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Every component of one mixture; `mic` is exactly `echo + near + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureBundle {
    pub mic: Waveform,
    pub far1: Waveform,
    pub far2: Waveform,
    pub echo: Waveform,
    pub near: Waveform,
    pub noise_scaled: Waveform,
    /// Gain applied to the supplied near end.
    pub near_gain: f64,
    /// Gain applied to the supplied noise.
    pub noise_gain: f64,
}

impl MixtureBundle {
    /// Scale every component by the same gain, rebuilding `mic` from the
    /// scaled parts so the additive model stays exact.
    pub fn scaled(&self, g: f64) -> Self {
        let echo = self.echo.scaled(g);
        let near = self.near.scaled(g);
        let noise_scaled = self.noise_scaled.scaled(g);
        let mic = sum3(&echo, &near, &noise_scaled);
        Self {
            mic,
            far1: self.far1.scaled(g),
            far2: self.far2.scaled(g),
            echo,
            near,
            noise_scaled,
            near_gain: self.near_gain * g,
            noise_gain: self.noise_gain * g,
        }
    }

    /// Measured signal-to-echo ratio over the near-end active region.
    pub fn measured_ser_db(&self) -> Option<f64> {
        let mask = active_mask(&self.near, ACTIVITY_FRAME, ACTIVITY_RANGE_DB);
        let ps = masked_power(&self.near, &mask)?;
        let pd = masked_power(&self.echo, &mask)?;
        (ps > 0.0 && pd > 0.0).then(|| 10.0 * (ps / pd).log10())
    }

    /// Measured (speech + echo) to noise ratio over the whole utterance.
    pub fn measured_snr_db(&self) -> Option<f64> {
        let psd = self.echo.add(&self.near).ok()?.power();
        let pv = self.noise_scaled.power();
        (psd > 0.0 && pv > 0.0).then(|| 10.0 * (psd / pv).log10())
    }
}

fn sum3(a: &Waveform, b: &Waveform, c: &Waveform) -> Waveform {
    let v = a.samples().iter().zip(b.samples()).zip(c.samples()).map(|((x, y), z)| x + y + z).collect();
    Waveform::new(v, a.sample_rate()).expect("finite sum")
}

/// Far-end pickups `x1 = r * g1`, `x2 = r * g2`.
pub fn make_far_end(r: &Waveform, g1: &Waveform, g2: &Waveform) -> (Waveform, Waveform) {
    (convolve(r, g1), convolve(r, g2))
}

/// Zero-pad `s` to `target_len`, splitting the padding between front and
/// rear at a seeded random point. Returns the padded signal and the offset
/// of the first original sample.
pub fn pad_near_end(s: &Waveform, target_len: usize, seed: u64) -> Result<(Waveform, usize)> {
    if s.len() > target_len {
        return bad_param(format!("near end ({} samples) is longer than the target {target_len}", s.len()));
    }
    let slack = target_len - s.len();
    let front = if slack == 0 { 0 } else { ChaCha8Rng::seed_from_u64(seed).random_range(0..=slack) };
    let mut v = vec![0.0; target_len];
    v[front..front + s.len()].copy_from_slice(s.samples());
    Ok((Waveform::new(v, s.sample_rate())?, front))
}

/// Per-sample activity: samples in frames whose power lies within
/// `range_db` of the loudest frame.
pub fn active_mask(x: &Waveform, frame: usize, range_db: f64) -> Vec<bool> {
    let powers: Vec<f64> = x
        .samples()
        .chunks(frame)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
        .collect();
    let max = powers.iter().copied().fold(0.0, f64::max);
    let mut mask = vec![false; x.len()];
    if max <= 0.0 {
        return mask;
    }
    let thresh = max * 10f64.powf(-range_db / 10.0);
    for (i, p) in powers.iter().enumerate() {
        if *p > thresh {
            let end = ((i + 1) * frame).min(x.len());
            mask[i * frame..end].iter_mut().for_each(|m| *m = true);
        }
    }
    mask
}

fn masked_power(x: &Waveform, mask: &[bool]) -> Option<f64> {
    let (sum, n) = x
        .samples()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fit_noise(noise: &Waveform, len: usize, seed: u64) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::Scaling("noise signal is empty".into()));
    }
    let offset = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15).random_range(0..noise.len());
    let v = (0..len).map(|i| noise.samples()[(offset + i) % noise.len()]).collect();
    Waveform::new(v, noise.sample_rate())
}

pub fn make_mixture(sc: &MixtureScenario) -> Result<MixtureBundle> {
    let tx = &sc.transmission_rirs;
    let rx = &sc.receiving_rirs;
    if tx.rirs.is_empty() || tx.rirs[0].len() < 2 {
        return bad_param("transmission RIR set needs one source and two pickups");
    }
    if rx.rirs.len() < 2 || rx.rirs[0].is_empty() || rx.rirs[1].is_empty() {
        return bad_param("receiving RIR set needs two loudspeakers and a microphone");
    }
    let (x1, x2) = make_far_end(&sc.far_end_source, tx.get(0, 0), tx.get(0, 1));
    let n = x1.len();
    if sc.near_end.len() != n {
        return bad_param(format!("near end has {} samples, far end {n}; pad the near end first", sc.near_end.len()));
    }
    let d1 = convolve(&x1, rx.get(0, 0));
    let d2 = convolve(&x2, rx.get(1, 0));
    let echo = Waveform::new(d1.samples().iter().zip(d2.samples()).map(|(a, b)| a + b).collect(), x1.sample_rate())?;

    let near_gain = match sc.ser_db {
        None => 1.0,
        Some(ser) => {
            let mask = active_mask(&sc.near_end, ACTIVITY_FRAME, ACTIVITY_RANGE_DB);
            let ps = masked_power(&sc.near_end, &mask).unwrap_or(0.0);
            if ps <= 0.0 {
                return Err(Error::Scaling("near end is silent; cannot reach the requested SER".into()));
            }
            let pd = masked_power(&echo, &mask).unwrap_or(0.0);
            if pd <= 0.0 {
                return Err(Error::Scaling("echo is silent over the near-end active region".into()));
            }
            (pd * 10f64.powf(ser / 10.0) / ps).sqrt()
        }
    };
    let near = sc.near_end.scaled(near_gain);

    let noise = fit_noise(&sc.noise, n, sc.seed)?;
    let noise_gain = match sc.snr_db {
        None => 1.0,
        Some(snr) => {
            let pv = noise.power();
            if pv <= 0.0 {
                return Err(Error::Scaling("noise is silent; cannot reach the requested SNR".into()));
            }
            let psd = echo.add(&near)?.power();
            if psd <= 0.0 {
                return Err(Error::Scaling("speech plus echo is silent; SNR undefined".into()));
            }
            (psd / (pv * 10f64.powf(snr / 10.0))).sqrt()
        }
    };
    let noise_scaled = noise.scaled(noise_gain);
    let mic = sum3(&echo, &near, &noise_scaled);
    Ok(MixtureBundle { mic, far1: x1, far2: x2, echo, near, noise_scaled, near_gain, noise_gain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{receiving_room, simulate_rir, transmission_room};
    use crate::signals::{speech_like, white_noise};

    fn wf(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn rir_sets(seed: u64) -> (RirSet, RirSet) {
        let tx = simulate_rir(&transmission_room([6.0, 4.0, 3.0], 0.3, 0.7, seed, 16_000)).unwrap();
        let rx = simulate_rir(&receiving_room([4.0, 3.0, 3.0], 0.3, 0.7, 16_000)).unwrap();
        (tx, rx)
    }

    fn scenario(ser: Option<f64>, snr: Option<f64>, seed: u64) -> MixtureScenario {
        let (tx, rx) = rir_sets(seed);
        let r = speech_like(2.0, 16_000, seed);
        let s = speech_like(0.8, 16_000, seed + 100);
        let (near, _) = pad_near_end(&s, r.len(), seed).unwrap();
        MixtureScenario {
            far_end_source: r,
            near_end: near,
            noise: white_noise(8000, 16_000, seed + 7),
            transmission_rirs: tx,
            receiving_rirs: rx,
            ser_db: ser,
            snr_db: snr,
            seed,
        }
    }

    #[test]
    fn far_end_identity_and_delay() {
        let r = white_noise(500, 16_000, 1);
        let mut imp = vec![0.0; 8];
        imp[0] = 1.0;
        let mut del = vec![0.0; 8];
        del[5] = 1.0;
        let (x1, x2) = make_far_end(&r, &wf(imp.clone()), &wf(imp.clone()));
        assert_eq!(x1, r);
        assert_eq!(x2, r);
        let (x1, x2) = make_far_end(&r, &wf(imp), &wf(del));
        assert_eq!(x2, x1.delayed(5));
    }

    #[test]
    fn additivity_is_exact() {
        let b = make_mixture(&scenario(Some(5.0), Some(20.0), 3)).unwrap();
        for i in 0..b.mic.len() {
            assert_eq!(b.mic.samples()[i], b.echo.samples()[i] + b.near.samples()[i] + b.noise_scaled.samples()[i]);
        }
        let s = b.scaled(3.7);
        for i in 0..s.mic.len() {
            assert_eq!(s.mic.samples()[i], s.echo.samples()[i] + s.near.samples()[i] + s.noise_scaled.samples()[i]);
        }
    }

    #[test]
    fn requested_ratios_are_recovered() {
        for (ser, snr, seed) in [(0.0, 10.0, 1), (5.0, 15.0, 2), (10.0, 25.0, 3), (15.0, 30.0, 4)] {
            let b = make_mixture(&scenario(Some(ser), Some(snr), seed)).unwrap();
            assert!((b.measured_ser_db().unwrap() - ser).abs() < 0.01);
            assert!((b.measured_snr_db().unwrap() - snr).abs() < 0.01);
        }
    }

    #[test]
    fn single_talk_mixture() {
        let mut sc = scenario(None, Some(20.0), 5);
        sc.near_end = Waveform::zeros(sc.near_end.len(), 16_000);
        let b = make_mixture(&sc).unwrap();
        let sum = b.echo.add(&b.noise_scaled).unwrap();
        assert_eq!(b.mic, sum);
    }

    #[test]
    fn silent_near_end_cannot_be_scaled() {
        let mut sc = scenario(Some(5.0), Some(20.0), 5);
        sc.near_end = Waveform::zeros(sc.near_end.len(), 16_000);
        assert!(matches!(make_mixture(&sc), Err(Error::Scaling(_))));
        let mut sc = scenario(Some(5.0), Some(20.0), 5);
        sc.noise = Waveform::zeros(100, 16_000);
        assert!(matches!(make_mixture(&sc), Err(Error::Scaling(_))));
    }

    #[test]
    fn zero_db_with_equal_powers_is_unit_gain() {
        // Echo and near end share the same power on the active region when
        // the near end is the echo itself.
        let base = scenario(Some(0.0), None, 6);
        let probe = make_mixture(&MixtureScenario { ser_db: None, ..base.clone() }).unwrap();
        let sc = MixtureScenario { near_end: probe.echo.clone(), ..base };
        let b = make_mixture(&sc).unwrap();
        assert!((b.near_gain - 1.0).abs() < 1e-10);
    }

    #[test]
    fn deterministic_bundle() {
        let a = make_mixture(&scenario(Some(5.0), Some(15.0), 8)).unwrap();
        let b = make_mixture(&scenario(Some(5.0), Some(15.0), 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_split() {
        let s = white_noise(100, 16_000, 2);
        let (same, off) = pad_near_end(&s, 100, 1).unwrap();
        assert_eq!((same, off), (s.clone(), 0));
        let (p, off) = pad_near_end(&s, 300, 42).unwrap();
        assert_eq!(p.len(), 300);
        assert_eq!(pad_near_end(&s, 300, 42).unwrap().1, off);
        assert!(p.samples()[..off].iter().all(|&v| v == 0.0));
        assert!(p.samples()[off + 100..].iter().all(|&v| v == 0.0));
        assert!(pad_near_end(&s, 50, 1).is_err());
    }

    #[test]
    fn cross_correlation_locates_padded_utterance() {
        let s = speech_like(0.5, 16_000, 9);
        let (p, off) = pad_near_end(&s, 16_000, 77).unwrap();
        let best = (0..=p.len() - s.len())
            .max_by(|&a, &b| {
                let c = |o: usize| s.samples().iter().enumerate().map(|(i, v)| v * p.samples()[o + i]).sum::<f64>();
                c(a).total_cmp(&c(b))
            })
            .unwrap();
        assert_eq!(best, off);
    }
}
