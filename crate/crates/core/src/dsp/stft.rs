use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{ComplexSpectrogram, FrameParams, Waveform};
use crate::error::Result;
use crate::tensor::Tensor;

/// Number of analysis frames for a signal of `len` samples:
/// `ceil((len - win) / hop) + 1`, at least one frame for any non-empty
/// signal, zero for an empty one. The final partial frame is zero-padded.
pub fn frame_count(len: usize, p: &FrameParams) -> usize {
    if len == 0 {
        0
    } else if len <= p.win_len {
        1
    } else {
        (len - p.win_len).div_ceil(p.hop_len) + 1
    }
}

pub fn stft(x: &Waveform, p: &FrameParams) -> Result<ComplexSpectrogram> {
    p.validate()?;
    let frames = frame_count(x.len(), p);
    let bins = p.bins();
    let window = p.window.coefficients(p.win_len);
    let fft = FftPlanner::new().plan_fft_forward(p.fft_len);

    let mut real = Tensor::zeros(&[frames, bins]);
    let mut imag = Tensor::zeros(&[frames, bins]);
    let mut buf = vec![Complex64::default(); p.fft_len];
    let samples = x.samples();
    for t in 0..frames {
        let start = t * p.hop_len;
        buf.iter_mut().for_each(|c| *c = Complex64::default());
        for (i, w) in window.iter().enumerate() {
            if let Some(&s) = samples.get(start + i) {
                buf[i].re = s * w;
            }
        }
        fft.process(&mut buf);
        for (dst, c) in real.slab_mut(t).iter_mut().zip(&buf[..bins]) {
            *dst = c.re;
        }
        for (dst, c) in imag.slab_mut(t).iter_mut().zip(&buf[..bins]) {
            *dst = c.im;
        }
    }
    ComplexSpectrogram::new(real, imag, *p, x.sample_rate())
}

/// Weighted overlap-add synthesis, normalised by the summed squared window.
/// The output spans `(T - 1) * hop + win` samples.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let p = s.params;
    p.validate()?;
    let frames = s.frames();
    if frames == 0 {
        return Waveform::new(Vec::new(), s.sample_rate);
    }
    let n = p.fft_len;
    let bins = s.bins();
    let window = p.window.coefficients(p.win_len);
    let ifft = FftPlanner::new().plan_fft_inverse(n);

    let out_len = (frames - 1) * p.hop_len + p.win_len;
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::default(); n];
    for t in 0..frames {
        let (re, im) = (s.real.slab(t), s.imag.slab(t));
        for k in 0..n {
            buf[k] = if k < bins {
                Complex64::new(re[k], im[k])
            } else {
                Complex64::new(re[n - k], -im[n - k])
            };
        }
        // DC and Nyquist of a real signal carry no imaginary part.
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let start = t * p.hop_len;
        for (i, w) in window.iter().enumerate() {
            out[start + i] += buf[i].re / n as f64 * w;
            norm[start + i] += w * w;
        }
    }
    for (o, w2) in out.iter_mut().zip(&norm) {
        *o = if *w2 > 1e-12 { *o / w2 } else { 0.0 };
    }
    Waveform::new(out, s.sample_rate)
}

/// Synthesis truncated or zero-extended to `len` samples.
pub fn istft_to_len(s: &ComplexSpectrogram, len: usize) -> Result<Waveform> {
    Ok(istft(s)?.with_len(len))
}
