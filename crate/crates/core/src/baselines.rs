//! Classical comparison systems: a joint stereo NLMS canceller in the
//! sample domain and a PSD-based stereo Wiener suppressor in the STFT domain.

use serde::{Deserialize, Serialize};

use crate::dsp::{ComplexSpectrogram, Waveform};
use crate::error::{bad_param, Result};
use crate::tensor::Tensor;
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlmsParams {
    pub filter_len: usize,
    pub mu: f64,
    pub delta: f64,
}

impl Default for NlmsParams {
    fn default() -> Self {
        Self { filter_len: 1600, mu: 0.5, delta: 1e-6 }
    }
}

/// Adaptive taps for both loudspeaker paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NlmsState {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub mu: f64,
    pub delta: f64,
}

impl NlmsState {
    pub fn new(p: NlmsParams) -> Result<Self> {
        if p.filter_len == 0 {
            return bad_param("NLMS filter length must be positive");
        }
        if !(p.mu >= 0.0 && p.mu <= 2.0) {
            return bad_param(format!("NLMS step size must lie in [0, 2], got {}", p.mu));
        }
        if !(p.delta > 0.0) {
            return bad_param(format!("NLMS regulariser must be positive, got {}", p.delta));
        }
        Ok(Self { w1: vec![0.0; p.filter_len], w2: vec![0.0; p.filter_len], mu: p.mu, delta: p.delta })
    }

    pub fn filter_len(&self) -> usize {
        self.w1.len()
    }
}

/// Joint stereo NLMS: `e(n) = y(n) - w1.x1(n) - w2.x2(n)`, then both tap
/// vectors step along their input vectors normalised by the summed energy.
/// Returns the error signal (near-end estimate) and the adapted state.
pub fn nlms_cancel(y: &Waveform, x1: &Waveform, x2: &Waveform, mut state: NlmsState) -> Result<(Waveform, NlmsState)> {
    if y.len() != x1.len() || y.len() != x2.len() {
        return bad_param(format!("NLMS needs equal lengths, got {}, {}, {}", y.len(), x1.len(), x2.len()));
    }
    if state.w1.len() != state.w2.len() || state.w1.is_empty() {
        return bad_param("NLMS tap vectors must be non-empty and equal length");
    }
    let n_taps = state.filter_len();
    let (ys, a, b) = (y.samples(), x1.samples(), x2.samples());
    // Reversed history buffers, doubled so each input vector is contiguous.
    let mut h1 = vec![0.0; 2 * n_taps];
    let mut h2 = vec![0.0; 2 * n_taps];
    let mut pos = 0;
    let mut energy = 0.0;
    let mut e = Vec::with_capacity(ys.len());
    for n in 0..ys.len() {
        pos = if pos == 0 { n_taps - 1 } else { pos - 1 };
        let (old1, old2) = (h1[pos], h2[pos]);
        h1[pos] = a[n];
        h1[pos + n_taps] = a[n];
        h2[pos] = b[n];
        h2[pos + n_taps] = b[n];
        energy += a[n] * a[n] + b[n] * b[n] - old1 * old1 - old2 * old2;
        let v1 = &h1[pos..pos + n_taps];
        let v2 = &h2[pos..pos + n_taps];
        let est: f64 = dot(&state.w1, v1) + dot(&state.w2, v2);
        let err = ys[n] - est;
        e.push(err);
        // Recompute occasionally so the running energy cannot drift.
        if n % 4096 == 0 {
            energy = dot(v1, v1) + dot(v2, v2);
        }
        let step = state.mu * err / (energy.max(0.0) + state.delta);
        if step != 0.0 {
            axpy(&mut state.w1, step, v1);
            axpy(&mut state.w2, step, v2);
        }
    }
    Ok((Waveform::new(e, y.sample_rate())?, state))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(w: &mut [f64], s: f64, v: &[f64]) {
    for (wi, vi) in w.iter_mut().zip(v) {
        *wi += s * vi;
    }
}

/// Normalised misalignment `10 log10(|w - h|^2 / |h|^2)` in dB; `h` is
/// zero-extended or truncated to the length of `w`.
pub fn misalignment_db(w: &[f64], h: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let hi = h.get(i).copied().unwrap_or(0.0);
        num += (wi - hi).powi(2);
        den += hi * hi;
    }
    den += h.iter().skip(w.len()).map(|v| v * v).sum::<f64>();
    num += h.iter().skip(w.len()).map(|v| v * v).sum::<f64>();
    10.0 * (num / den).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WienerParams {
    pub alpha_psd: f64,
    pub gain_floor: f64,
}

impl Default for WienerParams {
    fn default() -> Self {
        Self { alpha_psd: 0.92, gain_floor: 0.05 }
    }
}

impl WienerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_psd > 0.0 && self.alpha_psd < 1.0) {
            return bad_param(format!("alpha_psd must lie in (0, 1), got {}", self.alpha_psd));
        }
        if !(self.gain_floor >= 0.0 && self.gain_floor < 1.0) {
            return bad_param(format!("gain_floor must lie in [0, 1), got {}", self.gain_floor));
        }
        Ok(())
    }
}

/// Per-bin suppression gains `[T, F]` in `[gain_floor, 1]`.
///
/// Recursively smoothed auto- and cross-PSDs give the echo transfer
/// functions from the 2x2 system `sum_j Phi(xi, xj) H_j = Phi(xi, y)`; the
/// echo PSD is `Re(sum_i conj(Phi(xi, y)) H_i)` and the gain
/// `1 - Phi_dd / Phi_yy`, clamped.
pub fn wiener_gains(y: &ComplexSpectrogram, x1: &ComplexSpectrogram, x2: &ComplexSpectrogram, p: WienerParams) -> Result<Tensor> {
    p.validate()?;
    y.check_aligned(x1)?;
    y.check_aligned(x2)?;
    let (frames, bins) = y.dims();
    let a = p.alpha_psd;
    let zero = Complex64::default();
    let mut gains = Tensor::zeros(&[frames, bins]);
    // per bin: [yy, 11, 22, 12, 1y, 2y]
    let mut psd = vec![[zero; 6]; bins];
    for l in 0..frames {
        for (k, s) in psd.iter_mut().enumerate() {
            let c = |t: &ComplexSpectrogram| Complex64::new(t.real.at2(l, k), t.imag.at2(l, k));
            let (yv, u1, u2) = (c(y), c(x1), c(x2));
            let inst = [yv.conj() * yv, u1.conj() * u1, u2.conj() * u2, u1.conj() * u2, u1.conj() * yv, u2.conj() * yv];
            for (acc, v) in s.iter_mut().zip(inst) {
                *acc = a * *acc + (1.0 - a) * v;
            }
            let [pyy, p11, p22, p12, p1y, p2y] = *s;
            let (h1, h2) = solve_2x2(p11, p12, p22, p1y, p2y);
            let pdd = (p1y.conj() * h1 + p2y.conj() * h2).re.max(0.0);
            let g = if pyy.re > 0.0 { 1.0 - pdd / pyy.re } else { 1.0 };
            gains.set2(l, k, g.clamp(p.gain_floor, 1.0));
        }
    }
    Ok(gains)
}

/// Hermitian 2x2 solve with diagonal loading when near singular.
fn solve_2x2(p11: Complex64, p12: Complex64, p22: Complex64, b1: Complex64, b2: Complex64) -> (Complex64, Complex64) {
    let trace = p11.re + p22.re;
    if !(trace > 0.0) {
        return (Complex64::default(), Complex64::default());
    }
    let p21 = p12.conj();
    let mut d1 = p11;
    let mut d2 = p22;
    let mut det = d1 * d2 - p12 * p21;
    if det.norm() <= 1e-10 * trace * trace {
        let load = 1e-6 * trace;
        d1 += load;
        d2 += load;
        det = d1 * d2 - p12 * p21;
    }
    ((d2 * b1 - p12 * b2) / det, (d1 * b2 - p21 * b1) / det)
}

/// Applies [`wiener_gains`] to the microphone spectrum.
pub fn wiener_suppress(y: &ComplexSpectrogram, x1: &ComplexSpectrogram, x2: &ComplexSpectrogram, p: WienerParams) -> Result<ComplexSpectrogram> {
    let g = wiener_gains(y, x1, x2, p)?;
    y.with_planes(y.real.mul(&g)?, y.imag.mul(&g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, FrameParams};
    use crate::room::convolve;
    use crate::signals::white_noise;

    fn wf(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn random_path(len: usize, seed: u64) -> Waveform {
        let w = white_noise(len, 16_000, seed);
        wf(w.samples().iter().enumerate().map(|(i, v)| v * (-(i as f64) / (len as f64 / 4.0)).exp()).collect())
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(NlmsState::new(NlmsParams { mu: 2.5, ..Default::default() }).is_err());
        assert!(NlmsState::new(NlmsParams { delta: 0.0, ..Default::default() }).is_err());
        assert!(NlmsState::new(NlmsParams { filter_len: 0, ..Default::default() }).is_err());
        assert!(WienerParams { alpha_psd: 1.0, gain_floor: 0.1 }.validate().is_err());
        assert!(WienerParams { alpha_psd: 0.5, gain_floor: 1.0 }.validate().is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = NlmsState::new(NlmsParams { filter_len: 4, ..Default::default() }).unwrap();
        assert!(nlms_cancel(&Waveform::zeros(10, 16_000), &Waveform::zeros(9, 16_000), &Waveform::zeros(10, 16_000), s).is_err());
    }

    #[test]
    fn silent_far_end_passes_through() {
        let y = white_noise(2000, 16_000, 1);
        let z = Waveform::zeros(2000, 16_000);
        let s = NlmsState::new(NlmsParams { filter_len: 32, ..Default::default() }).unwrap();
        let (e, fin) = nlms_cancel(&y, &z, &z, s.clone()).unwrap();
        assert_eq!(e, y);
        assert_eq!(fin, s);
    }

    #[test]
    fn zero_step_keeps_weights() {
        let x1 = white_noise(500, 16_000, 2);
        let x2 = white_noise(500, 16_000, 3);
        let y = white_noise(500, 16_000, 4);
        let mut s = NlmsState::new(NlmsParams { filter_len: 3, mu: 0.0, delta: 1e-6 }).unwrap();
        s.w1 = vec![0.5, 0.0, 0.0];
        let (e, fin) = nlms_cancel(&y, &x1, &x2, s.clone()).unwrap();
        assert_eq!(fin, s);
        for n in 0..500 {
            assert!((e.samples()[n] - (y.samples()[n] - 0.5 * x1.samples()[n])).abs() < 1e-15);
        }
    }

    #[test]
    fn history_matches_direct_prediction() {
        // Reference update written out with explicit delay lines.
        let x1 = white_noise(300, 16_000, 5);
        let x2 = white_noise(300, 16_000, 6);
        let y = white_noise(300, 16_000, 7);
        let p = NlmsParams { filter_len: 5, mu: 0.7, delta: 1e-3 };
        let (e, fin) = nlms_cancel(&y, &x1, &x2, NlmsState::new(p).unwrap()).unwrap();
        let (mut w1, mut w2) = (vec![0.0; 5], vec![0.0; 5]);
        for n in 0..300 {
            let v = |x: &Waveform| (0..5).map(|i| if n >= i { x.samples()[n - i] } else { 0.0 }).collect::<Vec<_>>();
            let (v1, v2) = (v(&x1), v(&x2));
            let err = y.samples()[n] - dot(&w1, &v1) - dot(&w2, &v2);
            assert!((err - e.samples()[n]).abs() < 1e-10);
            let step = p.mu * err / (dot(&v1, &v1) + dot(&v2, &v2) + p.delta);
            axpy(&mut w1, step, &v1);
            axpy(&mut w2, step, &v2);
        }
        for (a, b) in w1.iter().zip(&fin.w1).chain(w2.iter().zip(&fin.w2)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn identifiable_stereo_path_converges() {
        let n = 160_000;
        let (x1, x2) = (white_noise(n, 16_000, 11), white_noise(n, 16_000, 12));
        let (h11, h12) = (random_path(64, 13), random_path(64, 14));
        let y = convolve(&x1, &h11).add(&convolve(&x2, &h12)).unwrap();
        let s = NlmsState::new(NlmsParams { filter_len: 64, mu: 0.5, delta: 1e-6 }).unwrap();
        let (e, fin) = nlms_cancel(&y, &x1, &x2, s).unwrap();
        let tail = 3 * n / 4..n;
        let py: f64 = y.samples()[tail.clone()].iter().map(|v| v * v).sum();
        let pe: f64 = e.samples()[tail].iter().map(|v| v * v).sum();
        assert!(10.0 * (py / pe).log10() >= 20.0);
        assert!(misalignment_db(&fin.w1, h11.samples()) < -20.0);
    }

    #[test]
    fn misalignment_of_exact_and_zero_taps() {
        assert_eq!(misalignment_db(&[1.0, 2.0], &[1.0, 2.0]), f64::NEG_INFINITY);
        assert!(misalignment_db(&[0.0, 0.0], &[1.0, 2.0]).abs() < 1e-12);
        assert!(misalignment_db(&[1.0], &[1.0, 1.0]) - 10.0 * 0.5f64.log10() < 1e-12);
    }

    #[test]
    fn no_far_end_means_unit_gain() {
        let p = FrameParams::default();
        let y = stft(&white_noise(4000, 16_000, 1), &p).unwrap();
        let z = y.scaled(0.0);
        let out = wiener_suppress(&y, &z, &z, WienerParams::default()).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn pure_echo_is_suppressed_to_floor() {
        let p = FrameParams::default();
        let n = 48_000;
        let (x1, x2) = (white_noise(n, 16_000, 21), white_noise(n, 16_000, 22));
        let y = convolve(&x1, &random_path(16, 23)).add(&convolve(&x2, &random_path(16, 24))).unwrap();
        let params = WienerParams { alpha_psd: 0.92, gain_floor: 0.05 };
        let g = wiener_gains(&stft(&y, &p).unwrap(), &stft(&x1, &p).unwrap(), &stft(&x2, &p).unwrap(), params).unwrap();
        let mean = g.sum() / g.len() as f64;
        assert!(mean < params.gain_floor + 0.05, "mean gain {mean}");
    }

    #[test]
    fn gains_respect_floor_and_unity() {
        let p = FrameParams::default();
        let (x1, x2) = (white_noise(8000, 16_000, 31), white_noise(8000, 16_000, 32));
        let y = convolve(&x1, &random_path(200, 33)).add(&white_noise(8000, 16_000, 34).scaled(0.5)).unwrap();
        let (sy, s1, s2) = (stft(&y, &p).unwrap(), stft(&x1, &p).unwrap(), stft(&x2, &p).unwrap());
        let params = WienerParams { alpha_psd: 0.8, gain_floor: 0.1 };
        let g = wiener_gains(&sy, &s1, &s2, params).unwrap();
        assert!(g.data().iter().all(|&v| (0.1..=1.0).contains(&v)));
        let out = wiener_suppress(&sy, &s1, &s2, params).unwrap();
        for l in 0..sy.frames() {
            for k in 0..sy.bins() {
                let (a, b) = (out.real.at2(l, k).hypot(out.imag.at2(l, k)), sy.real.at2(l, k).hypot(sy.imag.at2(l, k)));
                assert!(a >= 0.1 * b - 1e-12);
            }
        }
    }

    #[test]
    fn identical_far_ends_use_loading() {
        let p = FrameParams::default();
        let x = white_noise(8000, 16_000, 41);
        let y = convolve(&x, &random_path(8, 42));
        let (sy, sx) = (stft(&y, &p).unwrap(), stft(&x, &p).unwrap());
        let g = wiener_gains(&sy, &sx, &sx, WienerParams::default()).unwrap();
        assert!(g.is_finite());
        assert!(g.sum() / (g.len() as f64) < 0.2);
    }
}
