//! Layer primitives with hand-derived backward passes. Feature maps are
//! `[channels, frames, bins]`; sequences are `[frames, features]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bad_shape, Result};
use crate::tensor::Tensor;

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// 2-D convolution that is causal along time (stride 1, left padding of
/// `kt - 1` frames) and strided along frequency without padding. The
/// transposed variant upsamples frequency and is used in decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out, in, kt, kf]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
    pub transposed: bool,
}

impl Conv2d {
    /// Uniform fan-in initialisation in `+-scale / sqrt(in * kt * kf)`.
    pub fn init(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: usize,
        transposed: bool,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = scale / ((cin * kernel.0 * kernel.1) as f64).sqrt();
        Self {
            weight: uniform(&[cout, cin, kernel.0, kernel.1], bound, rng),
            bias: uniform(&[cout], bound, rng),
            stride,
            transposed,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: Tensor::zeros_like(&self.weight), bias: Tensor::zeros_like(&self.bias), ..*self }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn in_channels(&self) -> usize {
        self.dims().1
    }

    pub fn out_channels(&self) -> usize {
        self.dims().0
    }

    /// Output bins for `fin` input bins. Transposed layers take the
    /// requested `target` and fill the gap to the natural size with output
    /// padding, which must stay below the stride.
    pub fn out_bins(&self, fin: usize, target: usize) -> Result<usize> {
        let (_, _, _, kf) = self.dims();
        if self.transposed {
            let natural = (fin.max(1) - 1) * self.stride + kf;
            if fin == 0 || target < natural || target >= natural + self.stride {
                return bad_shape(format!("transposed conv cannot map {fin} bins to {target}"));
            }
            Ok(target)
        } else {
            if fin < kf {
                return bad_shape(format!("conv kernel of {kf} bins exceeds input of {fin}"));
            }
            Ok((fin - kf) / self.stride + 1)
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        if x.ndim() != 3 || x.shape()[0] != self.in_channels() {
            return bad_shape(format!("conv expects [{}, T, F], got {:?}", self.in_channels(), x.shape()));
        }
        Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
    }

    pub fn forward(&self, x: &Tensor, target_bins: usize) -> Result<Tensor> {
        let (_, frames, fin) = self.check_input(x)?;
        let fout = self.out_bins(fin, target_bins)?;
        let (co_n, ci_n, kt, kf) = self.dims();
        let s = self.stride;
        let w = self.weight.data();
        let xd = x.data();
        let mut y = Tensor::zeros(&[co_n, frames, fout]);
        let yd = y.data_mut();
        // Strided taps are handled one frequency phase at a time so that the
        // inner loops run over contiguous memory.
        let phase_len = if self.transposed { fin } else { fout };
        let mut phase = vec![0.0; phase_len];
        let mut acc = if self.transposed { vec![0.0; co_n * kf * fin] } else { Vec::new() };
        for t in 0..frames {
            for co in 0..co_n {
                yd[(co * frames + t) * fout..][..fout].fill(self.bias.data()[co]);
            }
            acc.fill(0.0);
            for ci in 0..ci_n {
                for dt in 0..kt {
                    let Some(ts) = (t + dt).checked_sub(kt - 1) else { continue };
                    let irow = &xd[(ci * frames + ts) * fin..][..fin];
                    for df in 0..kf {
                        if !self.transposed {
                            for (fo, p) in phase.iter_mut().enumerate() {
                                *p = irow[fo * s + df];
                            }
                        }
                        for co in 0..co_n {
                            let wv = w[((co * ci_n + ci) * kt + dt) * kf + df];
                            if self.transposed {
                                axpy(wv, irow, &mut acc[(co * kf + df) * fin..][..fin]);
                            } else {
                                axpy(wv, &phase, &mut yd[(co * frames + t) * fout..][..fout]);
                            }
                        }
                    }
                }
            }
            if self.transposed {
                for co in 0..co_n {
                    let orow = &mut yd[(co * frames + t) * fout..][..fout];
                    for df in 0..kf {
                        for (fi, &v) in acc[(co * kf + df) * fin..][..fin].iter().enumerate() {
                            orow[fi * s + df] += v;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `x`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Conv2d) -> Tensor {
        let (co_n, ci_n, kt, kf) = self.dims();
        let (frames, fin) = (x.shape()[1], x.shape()[2]);
        let fout = dy.shape()[2];
        let s = self.stride;
        let w = self.weight.data();
        let xd = x.data();
        let dyd = dy.data();
        let mut dx = Tensor::zeros(x.shape());
        let dxd = dx.data_mut();
        let gw = grad.weight.data_mut();
        let gb = grad.bias.data_mut();
        for co in 0..co_n {
            gb[co] += dyd[co * frames * fout..][..frames * fout].iter().sum::<f64>();
        }
        if self.transposed {
            // dy split into phases: dph[co][df][fi] = dy[co, t, fi * s + df]
            let mut dph = vec![0.0; co_n * kf * fin];
            for t in 0..frames {
                for co in 0..co_n {
                    let drow = &dyd[(co * frames + t) * fout..][..fout];
                    for df in 0..kf {
                        for (fi, p) in dph[(co * kf + df) * fin..][..fin].iter_mut().enumerate() {
                            *p = drow[fi * s + df];
                        }
                    }
                }
                for ci in 0..ci_n {
                    for dt in 0..kt {
                        let Some(ts) = (t + dt).checked_sub(kt - 1) else { continue };
                        let base = (ci * frames + ts) * fin;
                        let irow = &xd[base..base + fin];
                        let dxrow = &mut dxd[base..base + fin];
                        for co in 0..co_n {
                            for df in 0..kf {
                                let widx = ((co * ci_n + ci) * kt + dt) * kf + df;
                                let g = &dph[(co * kf + df) * fin..][..fin];
                                gw[widx] += dot(g, irow);
                                axpy(w[widx], g, dxrow);
                            }
                        }
                    }
                }
            }
        } else {
            let mut phase = vec![0.0; fout];
            let mut dacc = vec![0.0; kf * fout];
            for t in 0..frames {
                for ci in 0..ci_n {
                    for dt in 0..kt {
                        let Some(ts) = (t + dt).checked_sub(kt - 1) else { continue };
                        let base = (ci * frames + ts) * fin;
                        dacc.fill(0.0);
                        for df in 0..kf {
                            let irow = &xd[base..base + fin];
                            for (fo, p) in phase.iter_mut().enumerate() {
                                *p = irow[fo * s + df];
                            }
                            let da = &mut dacc[df * fout..][..fout];
                            for co in 0..co_n {
                                let widx = ((co * ci_n + ci) * kt + dt) * kf + df;
                                let drow = &dyd[(co * frames + t) * fout..][..fout];
                                gw[widx] += dot(drow, &phase);
                                axpy(w[widx], drow, da);
                            }
                        }
                        let dxrow = &mut dxd[base..base + fin];
                        for df in 0..kf {
                            for (fo, &v) in dacc[df * fout..][..fout].iter().enumerate() {
                                dxrow[fo * s + df] += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

pub fn elu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { v.exp_m1() })
}

/// ELU backward expressed through its output `y`.
pub fn elu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    y.zip_map(dy, |o, d| if o > 0.0 { d } else { d * (o + 1.0) }).expect("same shape")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent unit with gate order reset, update, candidate:
/// `r = s(Wir x + bir + Whr h + bhr)`, `z = s(Wiz x + biz + Whz h + bhz)`,
/// `n = tanh(Win x + bin + r * (Whn h + bhn))`, `h' = (1 - z) n + z h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    /// `[3H, I]`
    pub w_ih: Tensor,
    /// `[3H, H]`
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Tensor,
    /// Hidden states `h_0 .. h_T`, `[T + 1, H]`.
    h: Tensor,
    r: Tensor,
    z: Tensor,
    n: Tensor,
    /// `Whn h + bhn` before the reset gate is applied.
    hn: Tensor,
}

fn matvec_add(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        *o += dot(row, v);
    }
}

fn matvec_t_add(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (i, &vi) in v.iter().enumerate().take(rows) {
        if vi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

fn outer_add(g: &mut [f64], cols: usize, u: &[f64], v: &[f64]) {
    for (i, &ui) in u.iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        for (gv, b) in g[i * cols..(i + 1) * cols].iter_mut().zip(v) {
            *gv += ui * b;
        }
    }
}

impl Gru {
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: uniform(&[3 * hidden, input], bound, rng),
            w_hh: uniform(&[3 * hidden, hidden], bound, rng),
            b_ih: uniform(&[3 * hidden], bound, rng),
            b_hh: uniform(&[3 * hidden], bound, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_ih: Tensor::zeros_like(&self.w_ih),
            w_hh: Tensor::zeros_like(&self.w_hh),
            b_ih: Tensor::zeros_like(&self.b_ih),
            b_hh: Tensor::zeros_like(&self.b_hh),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, GruCache)> {
        if x.ndim() != 2 || x.shape()[1] != self.input() {
            return bad_shape(format!("GRU expects [T, {}], got {:?}", self.input(), x.shape()));
        }
        let (frames, inp, hid) = (x.shape()[0], self.input(), self.hidden());
        let mut h = Tensor::zeros(&[frames + 1, hid]);
        let (mut r, mut z, mut n, mut hn) =
            (Tensor::zeros(&[frames, hid]), Tensor::zeros(&[frames, hid]), Tensor::zeros(&[frames, hid]), Tensor::zeros(&[frames, hid]));
        let mut gi = vec![0.0; 3 * hid];
        let mut gh = vec![0.0; 3 * hid];
        for t in 0..frames {
            gi.copy_from_slice(self.b_ih.data());
            gh.copy_from_slice(self.b_hh.data());
            matvec_add(self.w_ih.data(), 3 * hid, inp, x.slab(t), &mut gi);
            matvec_add(self.w_hh.data(), 3 * hid, hid, h.slab(t), &mut gh);
            let prev = h.slab(t).to_vec();
            let next = h.slab_mut(t + 1);
            for j in 0..hid {
                let rj = sigmoid(gi[j] + gh[j]);
                let zj = sigmoid(gi[hid + j] + gh[hid + j]);
                let nj = (gi[2 * hid + j] + rj * gh[2 * hid + j]).tanh();
                next[j] = (1.0 - zj) * nj + zj * prev[j];
                r.slab_mut(t)[j] = rj;
                z.slab_mut(t)[j] = zj;
                n.slab_mut(t)[j] = nj;
                hn.slab_mut(t)[j] = gh[2 * hid + j];
            }
        }
        let out = Tensor::new(vec![frames, hid], h.data()[hid..].to_vec())?;
        Ok((out, GruCache { x: x.clone(), h, r, z, n, hn }))
    }

    /// Backpropagation through time; accumulates into `grad` and returns
    /// the gradient with respect to the input sequence.
    pub fn backward(&self, cache: &GruCache, dout: &Tensor, grad: &mut Gru) -> Tensor {
        let (frames, inp, hid) = (cache.x.shape()[0], self.input(), self.hidden());
        let mut dx = Tensor::zeros(&[frames, inp]);
        let mut dh_next = vec![0.0; hid];
        let mut dgi = vec![0.0; 3 * hid];
        let mut dgh = vec![0.0; 3 * hid];
        for t in (0..frames).rev() {
            let hp = cache.h.slab(t);
            let (r, z, n, hn) = (cache.r.slab(t), cache.z.slab(t), cache.n.slab(t), cache.hn.slab(t));
            let dh: Vec<f64> = dout.slab(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            for j in 0..hid {
                let dz = dh[j] * (hp[j] - n[j]);
                let dn = dh[j] * (1.0 - z[j]);
                let dan = dn * (1.0 - n[j] * n[j]);
                let dr = dan * hn[j];
                let dar = dr * r[j] * (1.0 - r[j]);
                let daz = dz * z[j] * (1.0 - z[j]);
                dgi[j] = dar;
                dgi[hid + j] = daz;
                dgi[2 * hid + j] = dan;
                dgh[j] = dar;
                dgh[hid + j] = daz;
                dgh[2 * hid + j] = dan * r[j];
                dh_next[j] = dh[j] * z[j];
            }
            outer_add(grad.w_ih.data_mut(), inp, &dgi, cache.x.slab(t));
            outer_add(grad.w_hh.data_mut(), hid, &dgh, hp);
            for (g, d) in grad.b_ih.data_mut().iter_mut().zip(&dgi) {
                *g += d;
            }
            for (g, d) in grad.b_hh.data_mut().iter_mut().zip(&dgh) {
                *g += d;
            }
            matvec_t_add(self.w_ih.data(), 3 * hid, inp, &dgi, dx.slab_mut(t));
            matvec_t_add(self.w_hh.data(), 3 * hid, hid, &dgh, &mut dh_next);
        }
        dx
    }
}
