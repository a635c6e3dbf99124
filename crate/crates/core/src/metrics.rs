//! Objective evaluation: ERLE on single-talk segments and ESTOI.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{bad_param, Error, Result};
use crate::Complex64;

/// ERLE reported when the residual is exactly zero.
pub const ERLE_CLAMP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Erle {
    pub db: f64,
    /// Residual energy was zero and `db` is the clamp value.
    pub clamped: bool,
}

/// `10 log10(mean(y^2) / mean(e^2))`.
pub fn erle(y: &[f64], e: &[f64]) -> Result<Erle> {
    if y.len() != e.len() {
        return bad_param(format!("ERLE needs equal lengths, got {} and {}", y.len(), e.len()));
    }
    let py: f64 = y.iter().map(|v| v * v).sum();
    let pe: f64 = e.iter().map(|v| v * v).sum();
    if !(py > 0.0) {
        return Err(Error::Data("ERLE undefined: microphone segment has zero energy".into()));
    }
    if pe == 0.0 {
        return Ok(Erle { db: ERLE_CLAMP_DB, clamped: true });
    }
    Ok(Erle { db: 10.0 * (py / pe).log10(), clamped: false })
}

/// ERLE restricted to the samples where `mask` is set.
pub fn erle_masked(y: &Waveform, e: &Waveform, mask: &[bool]) -> Result<Erle> {
    if y.len() != e.len() || mask.len() != y.len() {
        return bad_param(format!("ERLE needs equal lengths, got {}, {} and mask {}", y.len(), e.len(), mask.len()));
    }
    let pick = |x: &Waveform| -> Vec<f64> { x.samples().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect() };
    erle(&pick(y), &pick(e))
}

/// Per-file evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub id: String,
    pub mode: String,
    pub noise: String,
    pub snr_db: Option<f64>,
    pub ser_db: Option<f64>,
    pub algo: String,
    pub erle_db: Option<f64>,
    /// ERLE hit the clamp (residual energy zero or negligible).
    pub erle_clamped: bool,
    pub estoi: Option<f64>,
}

const FS: u32 = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate-intelligibility segment (384 ms at 10 kHz).
pub const SEGMENT_FRAMES: usize = 30;
const DYN_RANGE: f64 = 40.0;

/// Extended short-time objective intelligibility of `degraded` against the
/// clean `reference`, both at the same rate.
pub fn estoi(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    if reference.len() != degraded.len() {
        return bad_param(format!("ESTOI needs equal lengths, got {} and {}", reference.len(), degraded.len()));
    }
    if reference.sample_rate() != degraded.sample_rate() {
        return bad_param("ESTOI inputs must share a sample rate");
    }
    let (mut x, mut y) = (reference.samples().to_vec(), degraded.samples().to_vec());
    if reference.sample_rate() != FS {
        x = resample(&x, FS, reference.sample_rate());
        y = resample(&y, FS, reference.sample_rate());
    }
    let (x, y) = remove_silent_frames(&x, &y);
    let obm = third_octave_matrix();
    let (xb, yb) = (band_envelopes(&x, &obm), band_envelopes(&y, &obm));
    let frames = xb.len();
    if frames < SEGMENT_FRAMES {
        return Err(Error::Data(format!(
            "ESTOI needs at least {SEGMENT_FRAMES} active frames after silence removal, got {frames}"
        )));
    }
    let segments = frames - SEGMENT_FRAMES + 1;
    let mut total = 0.0;
    for m in 0..segments {
        let xs = normalise_segment(&xb[m..m + SEGMENT_FRAMES]);
        let ys = normalise_segment(&yb[m..m + SEGMENT_FRAMES]);
        total += xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / SEGMENT_FRAMES as f64;
    }
    Ok(total / segments as f64)
}

/// Row (per band, over time) then column (per frame, over bands)
/// mean-removal and unit-norm scaling. Returned band-major `[band][frame]`.
fn normalise_segment(frames: &[[f64; NUM_BANDS]]) -> Vec<f64> {
    let n = frames.len();
    let mut m = vec![0.0; NUM_BANDS * n];
    for j in 0..NUM_BANDS {
        let row: Vec<f64> = frames.iter().map(|f| f[j]).collect();
        let mean = row.iter().sum::<f64>() / n as f64;
        let norm = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt() + f64::EPSILON;
        for (t, v) in row.iter().enumerate() {
            m[j * n + t] = (v - mean) / norm;
        }
    }
    for t in 0..n {
        let mean = (0..NUM_BANDS).map(|j| m[j * n + t]).sum::<f64>() / NUM_BANDS as f64;
        let norm = (0..NUM_BANDS).map(|j| (m[j * n + t] - mean).powi(2)).sum::<f64>().sqrt() + f64::EPSILON;
        for j in 0..NUM_BANDS {
            m[j * n + t] = (m[j * n + t] - mean) / norm;
        }
    }
    m
}

/// Symmetric Hann of `n + 2` points with both zero end points dropped.
fn inner_hann(n: usize) -> Vec<f64> {
    let m = (n + 1) as f64;
    (1..=n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / m).cos()).collect()
}

/// Frame starts `0, hop, ...` strictly before `len - win`.
fn frame_starts(len: usize, win: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(win)).step_by(hop)
}

/// Drops frames more than 40 dB below the loudest reference frame and
/// re-synthesises both signals by overlap-add of the kept windowed frames.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = inner_hann(N_FRAME);
    let starts: Vec<usize> = frame_starts(x.len(), N_FRAME, hop).collect();
    let energy_db: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..N_FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + f64::EPSILON).log10()
        })
        .collect();
    let max = energy_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts.iter().zip(&energy_db).filter(|(_, &e)| max - DYN_RANGE - e < 0.0).map(|(&s, _)| s).collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * hop + N_FRAME;
    let ola = |sig: &[f64]| {
        let mut out = vec![0.0; out_len];
        for (f, &s) in kept.iter().enumerate() {
            for i in 0..N_FRAME {
                out[f * hop + i] += w[i] * sig[s + i];
            }
        }
        out
    };
    (ola(x), ola(y))
}

/// Third-octave band edges as FFT bin ranges `[lo, hi)`.
fn third_octave_matrix() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|i| i as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |f: f64| (0..bins).min_by(|&a, &b| (freqs[a] - f).abs().total_cmp(&(freqs[b] - f).abs())).unwrap();
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band amplitude envelopes per frame: `sqrt(sum |X|^2)` over each band.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<[f64; NUM_BANDS]> {
    let w = inner_hann(N_FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let mut buf = vec![Complex64::default(); NFFT];
    frame_starts(x.len(), N_FRAME, N_FRAME / 2)
        .map(|s| {
            buf.iter_mut().for_each(|c| *c = Complex64::default());
            for i in 0..N_FRAME {
                buf[i].re = w[i] * x[s + i];
            }
            fft.process(&mut buf);
            let mut env = [0.0; NUM_BANDS];
            for (e, &(lo, hi)) in env.iter_mut().zip(bands) {
                *e = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            }
            env
        })
        .collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase rational resampler from `from` Hz to `to` Hz with a Kaiser
/// windowed-sinc low-pass (60 dB rejection, roll-off a tenth of the cut-off).
/// Output length is `ceil(len * p / q)` with zero-phase alignment.
pub fn resample(x: &[f64], to: u32, from: u32) -> Vec<f64> {
    let g = gcd(to, from);
    let (p, q) = ((to / g) as usize, (from / g) as usize);
    if p == q {
        return x.to_vec();
    }
    let cutoff = 1.0 / (2.0 * p.max(q) as f64);
    let rejection_db = 60.0;
    let half = ((rejection_db - 8.0) / (28.714 * cutoff / 10.0)).ceil() as usize;
    let beta = 0.1102 * (rejection_db - 8.7);
    let m = 2 * half + 1;
    let mut h: Vec<f64> = (0..m)
        .map(|i| {
            let t = i as f64 - half as f64;
            let r = 2.0 * i as f64 / (m - 1) as f64 - 1.0;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
            kaiser * 2.0 * p as f64 * cutoff * sinc(2.0 * cutoff * t)
        })
        .collect();
    let total: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v = *v / total * p as f64);

    let out_len = (x.len() * p).div_ceil(q);
    (0..out_len)
        .map(|n| {
            // Upsampled index n*q is centred on filter tap `half`.
            let centre = n * q + half;
            let j_lo = (centre + 1).saturating_sub(m).div_ceil(p);
            let j_hi = (centre / p).min(x.len().saturating_sub(1));
            (j_lo..=j_hi).filter(|&j| j < x.len()).map(|j| x[j] * h[centre - j * p]).sum()
        })
        .collect()
}
