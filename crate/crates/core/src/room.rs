//! Shoebox room impulse responses by the image method, plus the
//! convolution and decay-analysis helpers that go with them.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{wav, Waveform};
use crate::error::{bad_param, Error, Result};

pub type Position = [f64; 3];

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
/// Array and loudspeaker height used by the standard layouts.
pub const LAYOUT_HEIGHT: f64 = 1.5;
pub const LOUDSPEAKER_SPACING: f64 = 2.0;
pub const MIC_SPACING: f64 = 0.4;

/// Rectangular room with omnidirectional sources and microphones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomScenario {
    pub room_dims: [f64; 3],
    pub t60: f64,
    pub sources: Vec<Position>,
    pub mics: Vec<Position>,
    pub rir_len: usize,
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    #[serde(default)]
    pub absorption: Absorption,
}

/// How the uniform wall absorption coefficient is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Absorption {
    /// Sabine inversion of `t60`.
    Sabine,
    /// Sabine start point, then refined until the Schroeder decay of a
    /// reference image-method response matches `t60`.
    #[default]
    Calibrated,
    /// Explicit coefficient; `Fixed(1.0)` is free field.
    Fixed(f64),
}

impl RoomScenario {
    pub fn new(room_dims: [f64; 3], t60: f64, sources: Vec<Position>, mics: Vec<Position>, sample_rate: u32) -> Self {
        Self {
            room_dims,
            t60,
            sources,
            mics,
            rir_len: default_rir_len(t60, sample_rate),
            sample_rate,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            absorption: Absorption::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&d| !(d > 0.0)) {
            return bad_param(format!("room dimensions must be positive, got {:?}", self.room_dims));
        }
        if !(self.t60 > 0.0) {
            return bad_param(format!("t60 must be positive, got {}", self.t60));
        }
        if self.rir_len == 0 {
            return bad_param("rir_len must be positive");
        }
        if self.sample_rate == 0 || !(self.speed_of_sound > 0.0) {
            return bad_param("sample rate and speed of sound must be positive");
        }
        for (kind, list) in [("source", &self.sources), ("mic", &self.mics)] {
            for (i, p) in list.iter().enumerate() {
                let inside = p.iter().zip(&self.room_dims).all(|(&c, &d)| c > 0.0 && c < d);
                if !inside {
                    return bad_param(format!("{kind} {i} at {p:?} is not strictly inside room {:?}", self.room_dims));
                }
            }
        }
        if let Absorption::Fixed(a) = self.absorption {
            if !(a > 0.0 && a <= 1.0) {
                return bad_param(format!("absorption override must lie in (0, 1], got {a}"));
            }
        }
        Ok(())
    }

    /// Wall absorption coefficient in effect for this scenario.
    pub fn absorption_coefficient(&self) -> Result<f64> {
        match self.absorption {
            Absorption::Fixed(a) => Ok(a),
            Absorption::Sabine => sabine_absorption(self.room_dims, self.t60, self.speed_of_sound),
            Absorption::Calibrated => {
                calibrated_absorption(self.room_dims, self.t60, self.speed_of_sound, self.sample_rate, self.rir_len)
            }
        }
    }
}

/// Default RIR length: `t60 * fs` samples, at most one second.
pub fn default_rir_len(t60: f64, sample_rate: u32) -> usize {
    ((t60 * sample_rate as f64).round() as usize).clamp(1, sample_rate as usize)
}

/// Uniform absorption coefficient that yields `t60` under Sabine's formula
/// `T60 = 24 ln(10) V / (c S a)`.
pub fn sabine_absorption(dims: [f64; 3], t60: f64, c: f64) -> Result<f64> {
    let [lx, ly, lz] = dims;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    let alpha = 24.0 * 10f64.ln() * volume / (c * surface * t60);
    if alpha > 1.0 {
        return bad_param(format!(
            "t60 = {t60} s is too short for a {lx}x{ly}x{lz} m room: Sabine's formula needs absorption {alpha:.3} > 1 \
             (V = {volume:.1} m^3, S = {surface:.1} m^2; shortest reachable t60 is {:.3} s)",
            t60 * alpha
        ));
    }
    Ok(alpha)
}

/// Impulse responses for every (source, mic) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    /// Indexed `[source][mic]`.
    pub rirs: Vec<Vec<Waveform>>,
    pub scenario: RoomScenario,
}

impl RirSet {
    pub fn get(&self, source: usize, mic: usize) -> &Waveform {
        &self.rirs[source][mic]
    }

    /// Write `rir_s{source}_m{mic}.wav` files plus `rirs.toml`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (s, row) in self.rirs.iter().enumerate() {
            for (m, h) in row.iter().enumerate() {
                let name = format!("rir_s{s}_m{m}.wav");
                wav::write(dir.join(&name), h)?;
                files.push(name);
            }
        }
        let manifest = RirManifest { absorption: self.scenario.absorption_coefficient()?, scenario: self.scenario.clone(), files };
        let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(dir.join("rirs.toml"), text)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RirManifest {
    absorption: f64,
    files: Vec<String>,
    scenario: RoomScenario,
}

/// Allen–Berkley image-method synthesis with uniform wall reflection
/// `beta = sqrt(1 - absorption)`. Image delays are rounded to the nearest
/// sample and every image contributes `beta^reflections / (4 pi d)`.
pub fn simulate_rir(scenario: &RoomScenario) -> Result<RirSet> {
    scenario.validate()?;
    let alpha = scenario.absorption_coefficient()?;
    let beta = (1.0 - alpha).max(0.0).sqrt();
    let rirs = scenario
        .sources
        .iter()
        .map(|src| scenario.mics.iter().map(|mic| image_rir(scenario, beta, src, mic)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(RirSet { rirs, scenario: scenario.clone() })
}

/// Absorption whose image-method decay has Schroeder T60 equal to `t60`.
///
/// A shoebox with uniform walls does not decay diffusely: grazing image
/// paths hit fewer walls, so the Sabine coefficient leaves the measured
/// T60 long. Starting from Sabine, the coefficient is rescaled by the ratio
/// of measured to requested T60 on a fixed reference pair until they agree
/// within 1%.
pub fn calibrated_absorption(dims: [f64; 3], t60: f64, c: f64, sample_rate: u32, rir_len: usize) -> Result<f64> {
    let mut alpha = sabine_absorption(dims, t60, c)?;
    let src = [0.35 * dims[0], 0.55 * dims[1], 0.5 * dims[2]];
    let mic = [0.6 * dims[0], 0.4 * dims[1], 0.45 * dims[2]];
    let reference = RoomScenario {
        room_dims: dims,
        t60,
        sources: vec![src],
        mics: vec![mic],
        rir_len,
        sample_rate,
        speed_of_sound: c,
        absorption: Absorption::Sabine,
    };
    for _ in 0..12 {
        let h = image_rir(&reference, (1.0 - alpha).sqrt(), &src, &mic)?;
        let measured = estimate_t60(&h)?;
        let ratio = measured / t60;
        if (ratio - 1.0).abs() < 0.01 {
            break;
        }
        let next = alpha * ratio;
        if next >= 1.0 {
            return bad_param(format!(
                "t60 = {t60} s is unreachable in a {dims:?} m room: calibration needs absorption {next:.3} > 1 \
                 (Sabine's formula gives {:.3})",
                sabine_absorption(dims, t60, c)?
            ));
        }
        alpha = next;
    }
    Ok(alpha)
}

fn image_rir(sc: &RoomScenario, beta: f64, src: &Position, mic: &Position) -> Result<Waveform> {
    let fs = sc.sample_rate as f64;
    let c = sc.speed_of_sound;
    let max_dist = sc.rir_len as f64 / fs * c;
    let max_d2 = max_dist * max_dist;

    // Per-axis image offsets and reflection counts.
    let axis = |a: usize| -> Vec<(f64, i32)> {
        let l = sc.room_dims[a];
        let n = (max_dist / (2.0 * l)).ceil() as i32 + 1;
        let mut v = Vec::with_capacity((4 * n + 2) as usize);
        for m in -n..=n {
            for q in 0..2 {
                let d = (1 - 2 * q) as f64 * src[a] + 2.0 * m as f64 * l - mic[a];
                if d.abs() <= max_dist {
                    v.push((d, (m - q).abs() + m.abs()));
                }
            }
        }
        v
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));
    let max_refl = (xs.iter().chain(&ys).chain(&zs).map(|e| e.1).max().unwrap_or(0) * 3) as usize;
    let beta_pow: Vec<f64> = (0..=max_refl).map(|k| beta.powi(k as i32)).collect();

    let mut h = vec![0.0; sc.rir_len];
    for &(dx, rx) in &xs {
        let dx2 = dx * dx;
        for &(dy, ry) in &ys {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > max_d2 {
                continue;
            }
            for &(dz, rz) in &zs {
                let d2 = dxy2 + dz * dz;
                if d2 > max_d2 {
                    continue;
                }
                let gain = beta_pow[(rx + ry + rz) as usize];
                if gain == 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                let n = (d / c * fs).round() as usize;
                if n < sc.rir_len {
                    h[n] += gain / (4.0 * PI * d.max(1e-9));
                }
            }
        }
    }
    Waveform::new(h, sc.sample_rate)
}

fn centre(dims: [f64; 3]) -> Position {
    [dims[0] / 2.0, dims[1] / 2.0, LAYOUT_HEIGHT]
}

fn mic_pair(dims: [f64; 3]) -> Vec<Position> {
    let c = centre(dims);
    vec![[c[0] - MIC_SPACING / 2.0, c[1], c[2]], [c[0] + MIC_SPACING / 2.0, c[1], c[2]]]
}

/// Receiving-room layout: a 0.4 m microphone pair centred in the room along
/// x at 1.5 m height, and two loudspeakers 2.0 m apart on a line parallel to
/// the array at perpendicular offset `speaker_offset`, symmetric about the
/// array centre. Sources are the loudspeakers `[left, right]`.
pub fn receiving_room(dims: [f64; 3], t60: f64, speaker_offset: f64, sample_rate: u32) -> RoomScenario {
    let c = centre(dims);
    let half = LOUDSPEAKER_SPACING / 2.0;
    let sources = vec![[c[0] - half, c[1] + speaker_offset, c[2]], [c[0] + half, c[1] + speaker_offset, c[2]]];
    RoomScenario::new(dims, t60, sources, mic_pair(dims), sample_rate)
}

/// Transmission-room layout: one talker at `distance` from the centre of a
/// 0.4 m microphone pair, at a horizontal angle drawn from `seed`.
pub fn transmission_room(dims: [f64; 3], t60: f64, distance: f64, seed: u64, sample_rate: u32) -> RoomScenario {
    let c = centre(dims);
    let angle = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..2.0 * PI);
    let talker = [c[0] + distance * angle.cos(), c[1] + distance * angle.sin(), c[2]];
    RoomScenario::new(dims, t60, vec![talker], mic_pair(dims), sample_rate)
}

/// Linear convolution truncated to `x.len()` samples.
pub fn convolve(x: &Waveform, h: &Waveform) -> Waveform {
    let out = convolve_samples(x.samples(), h.samples(), x.len());
    Waveform::new(out, x.sample_rate()).expect("convolution of finite signals is finite")
}

pub(crate) fn convolve_samples(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let h = &h[..h.len().min(out_len)];
    if x.len().min(out_len) * h.len() <= 1 << 16 {
        let mut y = vec![0.0; out_len];
        for (n, yn) in y.iter_mut().enumerate() {
            let lo = n.saturating_sub(x.len() - 1);
            let hi = n.min(h.len() - 1);
            if lo <= hi {
                *yn = (lo..=hi).map(|k| h[k] * x[n - k]).sum();
            }
        }
        return y;
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = (0..n).map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    let mut b: Vec<Complex64> = (0..n).map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    (0..out_len).map(|i| if i < n { a[i].re / n as f64 } else { 0.0 }).collect()
}

/// Schroeder backward-integrated energy decay curve in dB, 0 dB at n = 0.
pub fn schroeder_curve(h: &Waveform) -> Vec<f64> {
    let mut acc = 0.0;
    let mut energy: Vec<f64> = h
        .samples()
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    energy.reverse();
    let total = energy.first().copied().unwrap_or(0.0);
    energy.iter().map(|&e| 10.0 * (e / total).log10()).collect()
}

/// Reverberation time from a linear fit to the -5..-25 dB span of the
/// Schroeder curve, extrapolated to -60 dB.
pub fn estimate_t60(h: &Waveform) -> Result<f64> {
    if h.samples().iter().all(|&v| v == 0.0) {
        return bad_param("impulse response is all zeros");
    }
    let curve = schroeder_curve(h);
    let start = curve.iter().position(|&l| l <= -5.0);
    let end = curve.iter().position(|&l| l <= -25.0);
    let (Some(i5), Some(i25)) = (start, end) else {
        let floor = curve.iter().copied().filter(|l| l.is_finite()).fold(0.0, f64::min);
        return Err(Error::DecayRange(format!("decay reaches only {floor:.1} dB, need -25 dB")));
    };
    let pts: Vec<(f64, f64)> = (i5..i25)
        .filter(|&i| curve[i].is_finite())
        .map(|i| (i as f64 / h.sample_rate() as f64, curve[i]))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DecayRange(format!(
            "only {} finite points between -5 and -25 dB; the decay is a step, not a slope",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::DecayRange(format!("non-decaying fit slope {slope}")));
    }
    Ok(-60.0 / slope)
}


#[cfg(test)]
mod calibration_tests {
    use super::*;

    #[test]
    fn calibrated_decay_hits_every_standard_room() {
        for dims in [[4.0, 3.0, 3.0], [6.0, 4.0, 3.0], [8.0, 7.0, 3.0]] {
            for t60 in [0.3, 0.6, 0.9] {
                let set = simulate_rir(&receiving_room(dims, t60, 0.7, 16_000)).unwrap();
                let t = estimate_t60(set.get(0, 0)).unwrap();
                assert!((t / t60 - 1.0).abs() <= 0.2, "{dims:?} {t60}: {t}");
            }
        }
    }

    #[test]
    fn calibration_raises_absorption_above_sabine() {
        let s = sabine_absorption([6.0, 4.0, 3.0], 0.6, 343.0).unwrap();
        let c = calibrated_absorption([6.0, 4.0, 3.0], 0.6, 343.0, 16_000, 9600).unwrap();
        assert!(c > s && c < 1.0);
    }
}
