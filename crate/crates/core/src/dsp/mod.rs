//! Time-frequency analysis and synthesis shared by every processing stage.

mod spectrogram;
mod stft;
pub mod wav;

pub use spectrogram::{magnitude, phase, polar_to_complex, ComplexSpectrogram};
pub use stft::{frame_count, istft, istft_to_len, stft};

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, Result};

/// Sample rate every file-facing path expects.
pub const SAMPLE_RATE: u32 = 16_000;

/// A real discrete-time signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return bad_param("sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return bad_param(format!("non-finite sample at index {i}"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power over all samples; zero for an empty signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|v| v * gain).collect(), sample_rate: self.sample_rate }
    }

    /// Truncate or zero-extend to exactly `len` samples.
    pub fn with_len(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples, sample_rate: self.sample_rate }
    }

    /// Elementwise sum; the shorter operand is zero-extended.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        if self.sample_rate != other.sample_rate {
            return bad_param(format!("sample rates differ: {} vs {}", self.sample_rate, other.sample_rate));
        }
        let n = self.len().max(other.len());
        let samples = (0..n)
            .map(|i| self.samples.get(i).copied().unwrap_or(0.0) + other.samples.get(i).copied().unwrap_or(0.0))
            .collect();
        Ok(Self { samples, sample_rate: self.sample_rate })
    }

    /// Delay by `d` samples keeping the length.
    pub fn delayed(&self, d: usize) -> Self {
        let n = self.len();
        let mut samples = vec![0.0; n];
        if d < n {
            samples[d..].copy_from_slice(&self.samples[..n - d]);
        }
        Self { samples, sample_rate: self.sample_rate }
    }

    pub fn concat(parts: &[Waveform]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return bad_param("nothing to concatenate");
        };
        let mut samples = Vec::new();
        for p in parts {
            if p.sample_rate != first.sample_rate {
                return bad_param("sample rates differ in concatenation");
            }
            samples.extend_from_slice(&p.samples);
        }
        Ok(Self { samples, sample_rate: first.sample_rate })
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        (0..n)
            .map(|i| {
                let x = two_pi * i as f64 / n as f64;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * x.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * x.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Framing of the short-time analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameParams {
    pub win_len: usize,
    pub hop_len: usize,
    pub fft_len: usize,
    pub window: WindowKind,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self { win_len: 320, hop_len: 160, fft_len: 320, window: WindowKind::Hamming }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<()> {
        if self.hop_len == 0 {
            return bad_param("hop_len must be positive");
        }
        if !(self.hop_len <= self.win_len && self.win_len <= self.fft_len) {
            return bad_param(format!(
                "need hop_len <= win_len <= fft_len, got {} / {} / {}",
                self.hop_len, self.win_len, self.fft_len
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }
}
