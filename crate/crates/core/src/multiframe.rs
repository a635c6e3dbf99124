//! Per-frequency multi-frame (convolutive transfer function) filtering of
//! the two far-end spectra, used to estimate and remove linear echo.
//!
//! Every bin is filtered independently with a causal FIR across frames:
//! `out(l, k) = sum_q H(q, l, k) * X(l - q, k)` with frames before the start
//! of the signal read as zero.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::dsp::ComplexSpectrogram;
use crate::error::{bad_param, bad_shape, Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

pub const DEFAULT_TAPS: usize = 10;
const MAGIC: &[u8; 4] = b"MFFB";
const VERSION: u32 = 1;

/// Real and imaginary parts of the two complex filter banks, each
/// `[L taps, T frames, F bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFrameFilterBank {
    pub h11_r: Tensor,
    pub h11_i: Tensor,
    pub h12_r: Tensor,
    pub h12_i: Tensor,
}

impl MultiFrameFilterBank {
    pub fn zeros(taps: usize, frames: usize, bins: usize) -> Self {
        let z = Tensor::zeros(&[taps, frames, bins]);
        Self { h11_r: z.clone(), h11_i: z.clone(), h12_r: z.clone(), h12_i: z }
    }

    pub fn new(h11_r: Tensor, h11_i: Tensor, h12_r: Tensor, h12_i: Tensor) -> Result<Self> {
        if h11_r.ndim() != 3 {
            return bad_shape(format!("filter tensors must be [L, T, F], got {:?}", h11_r.shape()));
        }
        for t in [&h11_i, &h12_r, &h12_i] {
            h11_r.check_same_shape(t)?;
        }
        Ok(Self { h11_r, h11_i, h12_r, h12_i })
    }

    /// Broadcast time-invariant complex taps `[tap][bin]` over `frames`.
    pub fn from_static(h11: &[Vec<Complex64>], h12: &[Vec<Complex64>], frames: usize) -> Self {
        let taps = h11.len();
        let bins = h11.first().map_or(0, Vec::len);
        let mut bank = Self::zeros(taps, frames, bins);
        for q in 0..taps {
            for l in 0..frames {
                for k in 0..bins {
                    bank.h11_r.set3(q, l, k, h11[q][k].re);
                    bank.h11_i.set3(q, l, k, h11[q][k].im);
                    bank.h12_r.set3(q, l, k, h12[q][k].re);
                    bank.h12_i.set3(q, l, k, h12[q][k].im);
                }
            }
        }
        bank
    }

    pub fn taps(&self) -> usize {
        self.h11_r.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.h11_r.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.h11_r.shape()[2]
    }

    pub fn channels(&self) -> [&Tensor; 4] {
        [&self.h11_r, &self.h11_i, &self.h12_r, &self.h12_i]
    }

    pub fn is_finite(&self) -> bool {
        self.channels().iter().all(|t| t.is_finite())
    }

    /// Flat little-endian container: magic `MFFB`, u32 version, u64 L, T, F
    /// and channel count (4), then the four tensors in `h11_r, h11_i, h12_r,
    /// h12_i` order as row-major f64.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in [self.taps(), self.frames(), self.bins(), 4] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for t in self.channels() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a multi-frame filter bank file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Data(format!("unsupported filter bank version {version}")));
        }
        let mut dims = [0usize; 4];
        let mut b8 = [0u8; 8];
        for d in &mut dims {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        let [l, t, f, ch] = dims;
        if ch != 4 {
            return Err(Error::Data(format!("expected 4 channels, header says {ch}")));
        }
        let mut read_tensor = || -> Result<Tensor> {
            let mut data = Vec::with_capacity(l * t * f);
            for _ in 0..l * t * f {
                r.read_exact(&mut b8)?;
                data.push(f64::from_le_bytes(b8));
            }
            Tensor::new(vec![l, t, f], data)
        };
        let (a, b, c, d) = (read_tensor()?, read_tensor()?, read_tensor()?, read_tensor()?);
        Self::new(a, b, c, d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn check_filter(h: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    if h.ndim() != 3 || x.ndim() != 2 {
        return bad_shape(format!("filter {:?} must be [L,T,F] and signal {:?} [T,F]", h.shape(), x.shape()));
    }
    let (l, t, f) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    if x.shape() != [t, f] {
        return bad_shape(format!("filter {:?} does not match signal {:?}", h.shape(), x.shape()));
    }
    Ok((l, t, f))
}

/// Causal per-bin FIR across frames.
pub fn mf_apply(h: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (taps, frames, bins) = check_filter(h, x)?;
    let mut out = Tensor::zeros(&[frames, bins]);
    let (hd, xd) = (h.data(), x.data());
    let od = out.data_mut();
    for l in 0..frames {
        let row = &mut od[l * bins..(l + 1) * bins];
        for q in 0..taps.min(l + 1) {
            let hrow = &hd[(q * frames + l) * bins..][..bins];
            let xrow = &xd[(l - q) * bins..][..bins];
            for k in 0..bins {
                row[k] += hrow[k] * xrow[k];
            }
        }
    }
    Ok(out)
}

/// Gradient of `sum(dout * mf_apply(h, x))` with respect to `h`.
pub fn mf_apply_grad_filter(taps: usize, dout: &Tensor, x: &Tensor) -> Tensor {
    let (frames, bins) = (x.shape()[0], x.shape()[1]);
    let mut g = Tensor::zeros(&[taps, frames, bins]);
    let gd = g.data_mut();
    for q in 0..taps {
        for l in q..frames {
            let grow = &mut gd[(q * frames + l) * bins..][..bins];
            let drow = &dout.data()[l * bins..][..bins];
            let xrow = &x.data()[(l - q) * bins..][..bins];
            for k in 0..bins {
                grow[k] = drow[k] * xrow[k];
            }
        }
    }
    g
}

/// Linear echo estimate from both far-end spectra, complex products
/// expanded over real filtering:
/// `D_R = f(H11R,X1R) - f(H11I,X1I) + f(H12R,X2R) - f(H12I,X2I)`,
/// `D_I = f(H11R,X1I) + f(H11I,X1R) + f(H12R,X2I) + f(H12I,X2R)`.
pub fn estimate_echo(
    bank: &MultiFrameFilterBank,
    x1: &ComplexSpectrogram,
    x2: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    x1.check_aligned(x2)?;
    let f = mf_apply;
    let mut dr = f(&bank.h11_r, &x1.real)?;
    let mut di = f(&bank.h11_r, &x1.imag)?;
    dr = dr.sub(&f(&bank.h11_i, &x1.imag)?)?;
    di = di.add(&f(&bank.h11_i, &x1.real)?)?;
    dr = dr.add(&f(&bank.h12_r, &x2.real)?)?;
    di = di.add(&f(&bank.h12_r, &x2.imag)?)?;
    dr = dr.sub(&f(&bank.h12_i, &x2.imag)?)?;
    di = di.add(&f(&bank.h12_i, &x2.real)?)?;
    x1.with_planes(dr, di)
}

/// Gradient of `<dD, estimate_echo(bank, x1, x2)>` with respect to the bank.
pub fn estimate_echo_grad(
    taps: usize,
    dd: &ComplexSpectrogram,
    x1: &ComplexSpectrogram,
    x2: &ComplexSpectrogram,
) -> Result<MultiFrameFilterBank> {
    let g = |d: &Tensor, x: &Tensor| mf_apply_grad_filter(taps, d, x);
    MultiFrameFilterBank::new(
        g(&dd.real, &x1.real).add(&g(&dd.imag, &x1.imag))?,
        g(&dd.imag, &x1.real).sub(&g(&dd.real, &x1.imag))?,
        g(&dd.real, &x2.real).add(&g(&dd.imag, &x2.imag))?,
        g(&dd.imag, &x2.real).sub(&g(&dd.real, &x2.imag))?,
    )
}

/// Residual after removing the echo estimate from the microphone spectrum.
pub fn subtract_echo(y: &ComplexSpectrogram, d: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    y.check_aligned(d)?;
    y.sub(d)
}

/// Result of the least-squares fit of time-invariant taps.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub bank: MultiFrameFilterBank,
    /// `sum |D - estimate|^2` over all frames and bins.
    pub residual_energy: f64,
    /// Set when some bin's normal equations needed diagonal loading.
    pub regularized: bool,
}

/// Relative diagonal loading applied to rank-deficient normal equations.
pub const DIAGONAL_LOADING: f64 = 1e-8;

/// Least-squares time-invariant taps per bin minimising
/// `||D - estimate_echo(bank, X1, X2)||^2`, broadcast over frames.
pub fn ls_oracle_filter(
    x1: &ComplexSpectrogram,
    x2: &ComplexSpectrogram,
    d: &ComplexSpectrogram,
    taps: usize,
) -> Result<LsFit> {
    x1.check_aligned(x2)?;
    x1.check_aligned(d)?;
    let (frames, bins) = x1.dims();
    if taps == 0 || frames < taps {
        return bad_param(format!("need 1 <= taps <= frames, got {taps} taps for {frames} frames"));
    }
    let n = 2 * taps;
    let cx = |s: &ComplexSpectrogram, l: usize, k: usize| Complex64::new(s.real.at2(l, k), s.imag.at2(l, k));
    let mut h11 = vec![vec![Complex64::default(); bins]; taps];
    let mut h12 = vec![vec![Complex64::default(); bins]; taps];
    let mut regularized = false;

    for k in 0..bins {
        let regressor = |l: usize| -> Vec<Complex64> {
            let mut a = vec![Complex64::default(); n];
            for q in 0..taps.min(l + 1) {
                a[q] = cx(x1, l - q, k);
                a[taps + q] = cx(x2, l - q, k);
            }
            a
        };
        let mut r = vec![Complex64::default(); n * n];
        let mut p = vec![Complex64::default(); n];
        for l in 0..frames {
            let a = regressor(l);
            let dl = cx(d, l, k);
            for i in 0..n {
                let ai = a[i].conj();
                if ai == Complex64::default() {
                    continue;
                }
                for j in 0..n {
                    r[i * n + j] += ai * a[j];
                }
                p[i] += ai * dl;
            }
        }
        let w = match linalg::solve(r.clone(), p.clone(), 1e-12) {
            Some(w) => w,
            None => {
                regularized = true;
                let mean_diag = (0..n).map(|i| r[i * n + i].re).sum::<f64>() / n as f64;
                let load = DIAGONAL_LOADING * if mean_diag > 0.0 { mean_diag } else { 1.0 };
                for i in 0..n {
                    r[i * n + i] += load;
                }
                linalg::solve(r, p, 0.0).unwrap_or_else(|| vec![Complex64::default(); n])
            }
        };
        for q in 0..taps {
            h11[q][k] = w[q];
            h12[q][k] = w[taps + q];
        }
    }
    let bank = MultiFrameFilterBank::from_static(&h11, &h12, frames);
    let est = estimate_echo(&bank, x1, x2)?;
    let residual_energy = d.sub(&est)?.energy();
    Ok(LsFit { bank, residual_energy, regularized })
}
