//! Convolutional recurrent stage: strided conv encoder, GRU bottleneck over
//! the flattened per-frame features, and one or more mirrored decoders with
//! skip connections.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{elu, elu_backward, Conv2d, Gru, GruCache};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    /// Per decoder layer; the last entry is the head width.
    pub decoder_channels: Vec<usize>,
    /// `(time, frequency)`
    pub kernel: (usize, usize),
    /// `(time, frequency)`; time stride must be 1.
    pub stride: (usize, usize),
    pub gru_layers: usize,
    /// Must equal `last encoder channels * reduced bins`.
    pub gru_hidden: usize,
    /// Number of independent decoders sharing the encoder.
    pub output_heads: usize,
    pub skip: bool,
}

impl StageConfig {
    /// Frequency bins after each encoder layer for `bins` input bins.
    pub fn encoder_bins(&self, bins: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.encoder_channels.len());
        let mut f = bins;
        for _ in &self.encoder_channels {
            f = if f >= self.kernel.1 { (f - self.kernel.1) / self.stride.1 + 1 } else { 0 };
            out.push(f);
        }
        out
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.encoder_channels.is_empty() || self.decoder_channels.len() != self.encoder_channels.len() {
            return fail(format!(
                "encoder ({}) and decoder ({}) layer counts must match and be non-zero",
                self.encoder_channels.len(),
                self.decoder_channels.len()
            ));
        }
        if self.stride.0 != 1 || self.stride.1 == 0 || self.kernel.0 == 0 || self.kernel.1 < self.stride.1 {
            return fail(format!("unsupported kernel {:?} / stride {:?}", self.kernel, self.stride));
        }
        if self.in_channels == 0 || self.output_heads == 0 || self.gru_layers == 0 {
            return fail("channel, head and GRU layer counts must be positive".into());
        }
        let fb = *self.encoder_bins(bins).last().unwrap();
        if fb == 0 {
            return fail(format!("{bins} bins are too few for {} encoder layers", self.encoder_channels.len()));
        }
        let flat = self.encoder_channels.last().unwrap() * fb;
        if self.gru_hidden != flat {
            return fail(format!("gru_hidden must equal the flattened bottleneck width {flat}, got {}", self.gru_hidden));
        }
        Ok(())
    }

    /// Channels entering decoder layer `j`.
    fn decoder_in(&self, j: usize) -> usize {
        let e = self.encoder_channels.len();
        let prev = if j == 0 { self.encoder_channels[e - 1] } else { self.decoder_channels[j - 1] };
        prev + if self.skip { self.encoder_channels[e - 1 - j] } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrnStage {
    pub config: StageConfig,
    pub encoder: Vec<Conv2d>,
    pub gru: Vec<Gru>,
    pub decoders: Vec<Vec<Conv2d>>,
}

#[derive(Debug, Clone)]
pub struct StageCache {
    input: Tensor,
    enc_out: Vec<Tensor>,
    gru: Vec<GruCache>,
    dec_in: Vec<Vec<Tensor>>,
    dec_out: Vec<Vec<Tensor>>,
}

fn to_seq(x: &Tensor) -> Tensor {
    let (c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut s = Tensor::zeros(&[t, c * f]);
    for ci in 0..c {
        for ti in 0..t {
            s.slab_mut(ti)[ci * f..(ci + 1) * f].copy_from_slice(&x.data()[(ci * t + ti) * f..][..f]);
        }
    }
    s
}

fn from_seq(s: &Tensor, c: usize, f: usize) -> Tensor {
    let t = s.shape()[0];
    let mut x = Tensor::zeros(&[c, t, f]);
    for ci in 0..c {
        for ti in 0..t {
            x.data_mut()[(ci * t + ti) * f..][..f].copy_from_slice(&s.slab(ti)[ci * f..(ci + 1) * f]);
        }
    }
    x
}

impl CrnStage {
    /// `head_scale` multiplies the initial range of every decoder's final
    /// layer.
    pub fn init(config: &StageConfig, bins: usize, head_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate(bins)?;
        let mut cin = config.in_channels;
        let mut encoder = Vec::new();
        for &c in &config.encoder_channels {
            encoder.push(Conv2d::init(cin, c, config.kernel, config.stride.1, false, 1.0, rng));
            cin = c;
        }
        let mut gru = Vec::new();
        for _ in 0..config.gru_layers {
            gru.push(Gru::init(config.gru_hidden, config.gru_hidden, rng));
        }
        let n = config.decoder_channels.len();
        let decoders = (0..config.output_heads)
            .map(|_| {
                (0..n)
                    .map(|j| {
                        let scale = if j + 1 == n { head_scale } else { 1.0 };
                        Conv2d::init(config.decoder_in(j), config.decoder_channels[j], config.kernel, config.stride.1, true, scale, rng)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { config: config.clone(), encoder, gru, decoders })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(Conv2d::zeros_like).collect(),
            gru: self.gru.iter().map(Gru::zeros_like).collect(),
            decoders: self.decoders.iter().map(|d| d.iter().map(Conv2d::zeros_like).collect()).collect(),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.iter().enumerate() {
            out.push((format!("enc{i}.weight"), &c.weight));
            out.push((format!("enc{i}.bias"), &c.bias));
        }
        for (i, g) in self.gru.iter().enumerate() {
            out.push((format!("gru{i}.w_ih"), &g.w_ih));
            out.push((format!("gru{i}.w_hh"), &g.w_hh));
            out.push((format!("gru{i}.b_ih"), &g.b_ih));
            out.push((format!("gru{i}.b_hh"), &g.b_hh));
        }
        for (h, d) in self.decoders.iter().enumerate() {
            for (j, c) in d.iter().enumerate() {
                out.push((format!("dec{h}.{j}.weight"), &c.weight));
                out.push((format!("dec{h}.{j}.bias"), &c.bias));
            }
        }
        out
    }

    /// Mutable parameter tensors in the order of [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.encoder {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for g in &mut self.gru {
            out.push(&mut g.w_ih);
            out.push(&mut g.w_hh);
            out.push(&mut g.b_ih);
            out.push(&mut g.b_hh);
        }
        for d in &mut self.decoders {
            for c in d {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out
    }

    /// Returns the linear head outputs of every decoder, `[head, T, F]` each.
    pub fn forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, StageCache)> {
        let bins = x.shape().get(2).copied().unwrap_or(0);
        self.config.validate(bins)?;
        let mut enc_out = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for conv in &self.encoder {
            let fin = h.shape()[2];
            h = elu(&conv.forward(&h, fin)?);
            enc_out.push(h.clone());
        }
        let (cb, fb) = (h.shape()[0], h.shape()[2]);
        let mut seq = to_seq(&h);
        let mut gru_cache = Vec::with_capacity(self.gru.len());
        for g in &self.gru {
            let (s, c) = g.forward(&seq)?;
            seq = s;
            gru_cache.push(c);
        }
        let bottleneck = from_seq(&seq, cb, fb);
        let e = self.encoder.len();
        let mut outputs = Vec::new();
        let (mut dec_in, mut dec_out) = (Vec::new(), Vec::new());
        for dec in &self.decoders {
            let mut h = bottleneck.clone();
            let (mut ins, mut outs) = (Vec::new(), Vec::new());
            for (j, conv) in dec.iter().enumerate() {
                let inp = if self.config.skip { Tensor::concat0(&h, &enc_out[e - 1 - j])? } else { h };
                let target = if j + 1 < e { enc_out[e - 2 - j].shape()[2] } else { bins };
                let pre = conv.forward(&inp, target)?;
                h = if j + 1 < e { elu(&pre) } else { pre };
                ins.push(inp);
                outs.push(h.clone());
            }
            outputs.push(h);
            dec_in.push(ins);
            dec_out.push(outs);
        }
        Ok((outputs, StageCache { input: x.clone(), enc_out, gru: gru_cache, dec_in, dec_out }))
    }

    /// Gradients of the parameters and of the stage input given gradients
    /// of every head output.
    pub fn backward(&self, cache: &StageCache, douts: &[Tensor]) -> (CrnStage, Tensor) {
        let mut grad = self.zeros_like();
        let e = self.encoder.len();
        let mut d_enc: Vec<Tensor> = cache.enc_out.iter().map(Tensor::zeros_like).collect();
        let bottleneck_shape = cache.enc_out[e - 1].shape().to_vec();
        let mut d_bottleneck = Tensor::zeros(&bottleneck_shape);
        for (hd, dout) in douts.iter().enumerate() {
            let mut dh = dout.clone();
            for j in (0..e).rev() {
                if j + 1 < e {
                    dh = elu_backward(&cache.dec_out[hd][j], &dh);
                }
                let dinp = self.decoders[hd][j].backward(&cache.dec_in[hd][j], &dh, &mut grad.decoders[hd][j]);
                if self.config.skip {
                    let prev_c = cache.dec_in[hd][j].shape()[0] - cache.enc_out[e - 1 - j].shape()[0];
                    let (dprev, dskip) = dinp.split0(prev_c);
                    d_enc[e - 1 - j].add_assign(&dskip).expect("skip shapes agree");
                    dh = dprev;
                } else {
                    dh = dinp;
                }
            }
            d_bottleneck.add_assign(&dh).expect("bottleneck shapes agree");
        }
        let mut dseq = to_seq(&d_bottleneck);
        for (i, g) in self.gru.iter().enumerate().rev() {
            dseq = g.backward(&cache.gru[i], &dseq, &mut grad.gru[i]);
        }
        d_enc[e - 1]
            .add_assign(&from_seq(&dseq, bottleneck_shape[0], bottleneck_shape[2]))
            .expect("bottleneck shapes agree");
        let mut dx = Tensor::zeros(&[0]);
        for i in (0..e).rev() {
            let dpre = elu_backward(&cache.enc_out[i], &d_enc[i]);
            let input = if i == 0 { &cache.input } else { &cache.enc_out[i - 1] };
            let d = self.encoder[i].backward(input, &dpre, &mut grad.encoder[i]);
            if i == 0 {
                dx = d;
            } else {
                d_enc[i - 1].add_assign(&d).expect("encoder shapes agree");
            }
        }
        (grad, dx)
    }
}
