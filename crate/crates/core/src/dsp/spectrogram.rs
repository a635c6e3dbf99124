use super::FrameParams;
use crate::error::{bad_shape, Result};
use crate::tensor::Tensor;

/// Complex `[T × F]` time-frequency representation stored as real and
/// imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: Tensor,
    pub imag: Tensor,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(real: Tensor, imag: Tensor, params: FrameParams, sample_rate: u32) -> Result<Self> {
        if real.ndim() != 2 {
            return bad_shape(format!("spectrogram planes must be 2-D, got {:?}", real.shape()));
        }
        real.check_same_shape(&imag)?;
        Ok(Self { real, imag, params, sample_rate })
    }

    pub fn zeros(frames: usize, params: FrameParams, sample_rate: u32) -> Self {
        let f = params.bins();
        Self {
            real: Tensor::zeros(&[frames, f]),
            imag: Tensor::zeros(&[frames, f]),
            params,
            sample_rate,
        }
    }

    /// Another spectrogram with the same framing metadata.
    pub fn with_planes(&self, real: Tensor, imag: Tensor) -> Result<Self> {
        Self::new(real, imag, self.params, self.sample_rate)
    }

    pub fn frames(&self) -> usize {
        self.real.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.real.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frames(), self.bins())
    }

    pub fn check_aligned(&self, other: &ComplexSpectrogram) -> Result<()> {
        if self.dims() != other.dims() {
            return bad_shape(format!("spectrograms {:?} vs {:?}", self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.real.is_finite() && self.imag.is_finite()
    }

    pub fn energy(&self) -> f64 {
        self.real.sum_sq() + self.imag.sum_sq()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { real: self.real.scale(s), imag: self.imag.scale(s), ..self.clone() }
    }

    pub fn add(&self, other: &ComplexSpectrogram) -> Result<Self> {
        self.with_planes(self.real.add(&other.real)?, self.imag.add(&other.imag)?)
    }

    pub fn sub(&self, other: &ComplexSpectrogram) -> Result<Self> {
        self.with_planes(self.real.sub(&other.real)?, self.imag.sub(&other.imag)?)
    }
}

pub fn magnitude(s: &ComplexSpectrogram) -> Tensor {
    s.real.zip_map(&s.imag, f64::hypot).expect("planes share shape")
}

/// Phase in radians; zero-magnitude bins get phase 0.
pub fn phase(s: &ComplexSpectrogram) -> Tensor {
    s.real
        .zip_map(&s.imag, |re, im| if re == 0.0 && im == 0.0 { 0.0 } else { im.atan2(re) })
        .expect("planes share shape")
}

/// Rebuild a spectrogram from magnitude and phase planes, borrowing framing
/// metadata from `like`.
pub fn polar_to_complex(mag: &Tensor, phase: &Tensor, like: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    let real = mag.zip_map(phase, |m, p| m * p.cos())?;
    let imag = mag.zip_map(phase, |m, p| m * p.sin())?;
    ComplexSpectrogram::new(real, imag, like.params, like.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(re: &[f64], im: &[f64], t: usize) -> ComplexSpectrogram {
        let f = re.len() / t;
        ComplexSpectrogram::new(
            Tensor::new(vec![t, f], re.to_vec()).unwrap(),
            Tensor::new(vec![t, f], im.to_vec()).unwrap(),
            FrameParams::default(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn pythagorean_entry() {
        let s = spec(&[3.0], &[4.0], 1);
        assert_eq!(magnitude(&s).data(), &[5.0]);
        assert_eq!(phase(&s).data(), &[4f64.atan2(3.0)]);
    }

    #[test]
    fn zero_spectrum_has_zero_phase() {
        let s = spec(&[0.0; 6], &[0.0; 6], 2);
        assert!(magnitude(&s).data().iter().all(|&v| v == 0.0));
        assert!(phase(&s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn polar_round_trip() {
        let re: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let im: Vec<f64> = (0..24).map(|i| ((i * 5 % 13) as f64 - 6.0) * 0.2).collect();
        let s = spec(&re, &im, 4);
        let back = polar_to_complex(&magnitude(&s), &phase(&s), &s).unwrap();
        assert!(back.real.max_abs_diff(&s.real) < 1e-12);
        assert!(back.imag.max_abs_diff(&s.imag) < 1e-12);
    }

    #[test]
    fn mismatched_planes_rejected() {
        let r = Tensor::zeros(&[2, 3]);
        let i = Tensor::zeros(&[3, 2]);
        assert!(ComplexSpectrogram::new(r, i, FrameParams::default(), 16_000).is_err());
    }
}
