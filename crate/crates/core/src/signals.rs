//! Synthetic speech-like and noise material for desk-scale experiments when
//! no recorded corpus is supplied.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;

/// Harmonic syllables with formant-shaped spectra, unvoiced bursts and
/// pauses, normalised to an RMS of 0.1 over active samples.
pub fn speech_like(secs: f64, sample_rate: u32, seed: u64) -> Waveform {
    let fs = sample_rate as f64;
    let n = (secs * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let mut pos = (rng.random_range(0.02..0.12) * fs) as usize;
    while pos < n {
        let len = ((rng.random_range(0.12..0.30) * fs) as usize).min(n - pos);
        let gain = rng.random_range(0.4..1.0);
        if rng.random_bool(0.8) {
            voiced(&mut out[pos..pos + len], fs, gain, &mut rng);
        } else {
            unvoiced(&mut out[pos..pos + len], gain * 0.5, &mut rng);
        }
        pos += len;
        let gap = if rng.random_bool(0.15) { rng.random_range(0.25..0.5) } else { rng.random_range(0.03..0.15) };
        pos += (gap * fs) as usize;
    }
    normalise_active_rms(&mut out, 0.1);
    Waveform::new(out, sample_rate).expect("finite synthesis")
}

fn voiced(seg: &mut [f64], fs: f64, gain: f64, rng: &mut ChaCha8Rng) {
    let f0_start: f64 = rng.random_range(90.0..220.0);
    let f0_end = f0_start * rng.random_range(0.8..1.2);
    let formants = [
        (rng.random_range(300.0..850.0), 90.0, 1.0),
        (rng.random_range(850.0..2300.0), 130.0, 0.6),
        (rng.random_range(2300.0..3300.0), 200.0, 0.3),
    ];
    let envelope = |f: f64| -> f64 {
        formants.iter().map(|&(fc, bw, g)| g * (-0.5 * ((f - fc) / bw).powi(2)).exp()).sum::<f64>() + 0.02
    };
    let harmonics = (4000.0 / f0_start.min(f0_end)) as usize;
    let amps: Vec<f64> = (1..=harmonics).map(|h| envelope(h as f64 * f0_start) / (h as f64).sqrt()).collect();
    let len = seg.len();
    let mut phase = rng.random_range(0.0..2.0 * PI);
    for (i, s) in seg.iter_mut().enumerate() {
        let frac = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * frac;
        phase += 2.0 * PI * f0 / fs;
        let env = (PI * frac).sin().powi(2);
        let mut acc = 0.0;
        for (h, a) in amps.iter().enumerate() {
            if (h + 1) as f64 * f0 < fs / 2.0 {
                acc += a * ((h + 1) as f64 * phase).sin();
            }
        }
        *s += gain * env * acc;
    }
}

fn unvoiced(seg: &mut [f64], gain: f64, rng: &mut ChaCha8Rng) {
    let len = seg.len();
    let mut prev = 0.0;
    for (i, s) in seg.iter_mut().enumerate() {
        let w: f64 = StandardNormal.sample(rng);
        let env = (PI * i as f64 / len as f64).sin().powi(2);
        *s += gain * env * (w - 0.9 * prev);
        prev = w;
    }
}

fn normalise_active_rms(x: &mut [f64], target: f64) {
    let active: Vec<f64> = x.iter().copied().filter(|v| v.abs() > 1e-6).collect();
    if active.is_empty() {
        return;
    }
    let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= target / rms);
}

pub fn white_noise(len: usize, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    Waveform::new(v, sample_rate).expect("finite noise")
}

/// Noise families available without a recorded corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    /// Low-passed noise with a mains hum, standing in for domestic noise.
    Home,
    /// Sum of independent speech-like talkers.
    Babble,
}

impl NoiseKind {
    pub fn label(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Home => "home",
            NoiseKind::Babble => "babble",
        }
    }

    pub fn generate(self, len: usize, sample_rate: u32, seed: u64) -> Waveform {
        match self {
            NoiseKind::White => white_noise(len, sample_rate, seed),
            NoiseKind::Home => {
                let w = white_noise(len, sample_rate, seed);
                let fs = sample_rate as f64;
                let mut lp = 0.0;
                let v = w
                    .samples()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        lp = 0.95 * lp + 0.05 * x;
                        lp + 0.02 * (2.0 * PI * 50.0 * i as f64 / fs).sin()
                    })
                    .collect();
                Waveform::new(v, sample_rate).expect("finite noise")
            }
            NoiseKind::Babble => {
                let secs = len as f64 / sample_rate as f64;
                let mut acc = vec![0.0; len];
                for k in 0..6 {
                    let talker = speech_like(secs, sample_rate, seed.wrapping_mul(31).wrapping_add(k));
                    acc.iter_mut().zip(talker.samples()).for_each(|(a, t)| *a += t);
                }
                Waveform::new(acc, sample_rate).expect("finite noise")
            }
        }
    }
}
