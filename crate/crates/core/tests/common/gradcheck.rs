//! Central finite-difference checks shared by the gradient and
//! acceptance tests. Each returns the worst relative error it saw.

//! Central finite-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saec::dsp::{ComplexSpectrogram, FrameParams};
use saec::neural::layers::{elu, elu_backward, Conv2d, Gru};
use saec::neural::model::{loss_stage1_grad, loss_stage2_grad};
use saec::neural::{loss_and_grad, loss_stage1, loss_stage2, CrnStage, ModelConfig, Objective, SaesModel, StageConfig, TrainingExample};
use saec::tensor::Tensor;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_spec(t: usize, f: usize, rng: &mut ChaCha8Rng) -> ComplexSpectrogram {
    let p = FrameParams { win_len: 2 * (f - 1), hop_len: f - 1, fft_len: 2 * (f - 1), ..FrameParams::default() };
    ComplexSpectrogram::new(rand_tensor(&[t, f], rng), rand_tensor(&[t, f], rng), p, 16_000).unwrap()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` for up to
/// `samples` entries of the tensor selected by `pick`.
fn check_tensor<M: Clone>(
    model: &M,
    pick: impl Fn(&mut M) -> &mut Tensor,
    analytic: &Tensor,
    loss: &impl Fn(&M) -> f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let len = analytic.len();
    let mut worst: f64 = 0.0;
    for _ in 0..samples.min(len) {
        let i = rng.random_range(0..len);
        let mut plus = model.clone();
        pick(&mut plus).data_mut()[i] += EPS;
        let mut minus = model.clone();
        pick(&mut minus).data_mut()[i] -= EPS;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

pub fn conv() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let transposed = seed % 2 == 1;
        let kt = if seed % 4 < 2 { 1 } else { 3 };
        let conv = Conv2d::init(2, 3, (kt, 3), 2, transposed, 1.0, &mut rng);
        let x = rand_tensor(&[2, 4, 8], &mut rng);
        let fout = if transposed { 17 + (seed as usize / 2) % 2 } else { 3 };
        let proj = rand_tensor(&[3, 4, fout], &mut rng);
        let loss = |(c, x): &(Conv2d, Tensor)| c.forward(x, fout).unwrap().mul(&proj).unwrap().sum();
        let mut grad = conv.zeros_like();
        let dx = conv.backward(&x, &proj, &mut grad);
        let state = (conv, x);
        worst = worst.max(check_tensor(&state, |s| &mut s.0.weight, &grad.weight, &loss, 30, &mut rng));
        worst = worst.max(check_tensor(&state, |s| &mut s.0.bias, &grad.bias, &loss, 3, &mut rng));
        worst = worst.max(check_tensor(&state, |s| &mut s.1, &dx, &loss, 30, &mut rng));
    }
    worst
}

pub fn elu_act() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = rand_tensor(&[3, 5], &mut rng).scale(2.0);
        let proj = rand_tensor(&[3, 5], &mut rng);
        let loss = |x: &Tensor| elu(x).mul(&proj).unwrap().sum();
        let dx = elu_backward(&elu(&x), &proj);
        worst = worst.max(check_tensor(&x, |t| t, &dx, &loss, 15, &mut rng));
    }
    worst
}

pub fn gru() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let gru = Gru::init(3, 4, &mut rng);
        let x = rand_tensor(&[6, 3], &mut rng).scale(1.5);
        let proj = rand_tensor(&[6, 4], &mut rng);
        let loss = |(g, x): &(Gru, Tensor)| g.forward(x).unwrap().0.mul(&proj).unwrap().sum();
        let (_, cache) = gru.forward(&x).unwrap();
        let mut grad = gru.zeros_like();
        let dx = gru.backward(&cache, &proj, &mut grad);
        let s = (gru, x);
        worst = worst.max(check_tensor(&s, |s| &mut s.0.w_ih, &grad.w_ih, &loss, 12, &mut rng));
        worst = worst.max(check_tensor(&s, |s| &mut s.0.w_hh, &grad.w_hh, &loss, 12, &mut rng));
        worst = worst.max(check_tensor(&s, |s| &mut s.0.b_ih, &grad.b_ih, &loss, 6, &mut rng));
        worst = worst.max(check_tensor(&s, |s| &mut s.0.b_hh, &grad.b_hh, &loss, 6, &mut rng));
        worst = worst.max(check_tensor(&s, |s| &mut s.1, &dx, &loss, 12, &mut rng));
    }
    worst
}

pub fn crn_stage() -> f64 {
    let cfg = StageConfig {
        in_channels: 2,
        encoder_channels: vec![2, 3],
        decoder_channels: vec![2, 1],
        kernel: (3, 3),
        stride: (1, 2),
        gru_layers: 2,
        gru_hidden: 9,
        output_heads: 2,
        skip: true,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let stage = CrnStage::init(&cfg, 15, 1.0, &mut rng).unwrap();
        let x = rand_tensor(&[2, 4, 15], &mut rng);
        let proj = [rand_tensor(&[1, 4, 15], &mut rng), rand_tensor(&[1, 4, 15], &mut rng)];
        let loss = |(s, x): &(CrnStage, Tensor)| {
            let (outs, _) = s.forward(x).unwrap();
            outs.iter().zip(&proj).map(|(o, p)| o.mul(p).unwrap().sum()).sum::<f64>()
        };
        let (_, cache) = stage.forward(&x).unwrap();
        let (grad, dx) = stage.backward(&cache, &proj);
        let state = (stage, x);
        let n = grad.named_params().len();
        for k in 0..n {
            let analytic = grad.named_params()[k].1.clone();
            worst = worst.max(check_tensor(&state, |s| s.0.params_mut().swap_remove(k), &analytic, &loss, 4, &mut rng));
        }
        worst = worst.max(check_tensor(&state, |s| &mut s.1, &dx, &loss, 10, &mut rng));
    }
    worst
}

pub fn losses() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (a, b) = (rand_tensor(&[4, 5], &mut rng), rand_tensor(&[4, 5], &mut rng));
        let g = loss_stage1_grad(&a, &b).unwrap();
        worst = worst.max(check_tensor(&a, |t| t, &g, &|t: &Tensor| loss_stage1(t, &b).unwrap(), 10, &mut rng));
        // two-line oracle
        let direct: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 20.0;
        assert!((direct - loss_stage1(&a, &b).unwrap()).abs() < 1e-14);

        let (sh, s) = (rand_spec(4, 5, &mut rng), rand_spec(4, 5, &mut rng));
        let ds = loss_stage2_grad(&sh, &s).unwrap();
        let l2 = |x: &ComplexSpectrogram| loss_stage2(x, &s, 0.3).unwrap();
        worst = worst.max(check_tensor(&sh, |x| &mut x.real, &ds.real, &l2, 10, &mut rng));
        worst = worst.max(check_tensor(&sh, |x| &mut x.imag, &ds.imag, &l2, 10, &mut rng));
    }
    worst
}

fn small_model(seed: u64) -> SaesModel {
    let mut c = ModelConfig::scaled(8, 17, 2);
    for s in [&mut c.sle, &mut c.srn, &mut c.csr] {
        s.encoder_channels = vec![2, 2];
        let head = *s.decoder_channels.last().unwrap();
        s.decoder_channels = vec![2, head];
        s.gru_hidden = 2 * s.encoder_bins(17)[1];
    }
    // a larger head range so the filter path carries real gradient
    c.sle_head_scale = 0.5;
    c.csr_head_scale = 0.5;
    SaesModel::init(c, seed).unwrap()
}

fn example(rng: &mut ChaCha8Rng) -> TrainingExample {
    TrainingExample { y: rand_spec(5, 17, rng), x1: rand_spec(5, 17, rng), x2: rand_spec(5, 17, rng), s: rand_spec(5, 17, rng) }
}

/// Checks sampled entries of every parameter tensor in the named stage.
pub fn check_model(objective: Objective, stage: &str, seed_base: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let model = small_model(seed);
        let ex = example(&mut rng);
        let loss = |m: &SaesModel| loss_and_grad(m, &ex, objective).unwrap().0;
        let (_, grad) = loss_and_grad(&model, &ex, objective).unwrap();
        let names: Vec<String> = grad.named_params().into_iter().map(|(n, _)| n).collect();
        for (k, name) in names.iter().enumerate() {
            if !name.starts_with(stage) {
                continue;
            }
            let analytic = grad.params()[k].clone();
            worst = worst.max(check_tensor(&model, |m| m.params_mut().swap_remove(k), &analytic, &loss, 2, &mut rng));
        }
    }
    worst
}
