//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo run --release -p saec --example acceptance -- 1 7`.

#[path = "../tests/common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saec::baselines::{misalignment_db, nlms_cancel, NlmsParams, NlmsState};
use saec::dsp::{istft, stft, ComplexSpectrogram, FrameParams, Waveform};
use saec::harness::{cmd_synth, enhance_bundle, evaluate, read_bundle, read_dataset, synth, training_example, Algo, ExperimentConfig, TalkMode};
use saec::metrics::{erle, estoi, ERLE_CLAMP_DB};
use saec::multiframe::{estimate_echo, ls_oracle_filter, MultiFrameFilterBank};
use saec::neural::{train_two_stage, AdamConfig, Objective, SaesModel, TrainConfig};
use saec::room::{convolve, estimate_t60, receiving_room, simulate_rir};
use saec::signals::{speech_like, white_noise};
use saec::tensor::Tensor;
use saec::Complex64;

const FS: u32 = 16_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn db(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

fn stft_round_trip() -> Outcome {
    const TOL: f64 = 1e-6;
    let p = FrameParams::default();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Waveform::new((0..FS as usize).map(|_| rng.random_range(-1.0..1.0)).collect(), FS).unwrap();
        let y = istft(&stft(&x, &p).unwrap()).unwrap();
        let interior = p.win_len..x.len() - p.win_len;
        let err = interior.map(|n| (x.samples()[n] - y.samples()[n]).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < TOL && secs < 1.0, format!("max interior error {worst:.1e} (< {TOL:.0e}), {secs:.3} s for 5 signals (< 1 s)"))
}

fn multiframe_oracle() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (l, t, f) = (rng.random_range(1..=5), rng.random_range(1..=16), rng.random_range(2..=8));
        let p = FrameParams { win_len: 2 * (f - 1), hop_len: f - 1, fft_len: 2 * (f - 1), ..FrameParams::default() };
        let spec = |rng: &mut ChaCha8Rng| ComplexSpectrogram::new(rand_tensor(&[t, f], rng), rand_tensor(&[t, f], rng), p, FS).unwrap();
        let (x1, x2) = (spec(&mut rng), spec(&mut rng));
        let planes: Vec<Tensor> = (0..4).map(|_| rand_tensor(&[l, t, f], &mut rng)).collect();
        let bank = MultiFrameFilterBank::new(planes[0].clone(), planes[1].clone(), planes[2].clone(), planes[3].clone()).unwrap();
        let d = estimate_echo(&bank, &x1, &x2).unwrap();
        let cx = |s: &ComplexSpectrogram, n: usize, k: usize| Complex64::new(s.real.at2(n, k), s.imag.at2(n, k));
        for n in 0..t {
            for k in 0..f {
                let mut acc = Complex64::default();
                for q in 0..l.min(n + 1) {
                    let h11 = Complex64::new(planes[0].at3(q, n, k), planes[1].at3(q, n, k));
                    let h12 = Complex64::new(planes[2].at3(q, n, k), planes[3].at3(q, n, k));
                    acc += h11 * cx(&x1, n - q, k) + h12 * cx(&x2, n - q, k);
                }
                worst = worst.max((acc - cx(&d, n, k)).norm());
            }
        }
    }
    outcome(worst < TOL, format!("100 instances, max deviation from complex convolution {worst:.1e} (< {TOL:.0e})"))
}

fn ctf_capacity() -> Outcome {
    const TARGET_DB: f64 = 20.0;
    let start = Instant::now();
    let p = FrameParams::default();
    let mut room = receiving_room([6.0, 4.0, 3.0], 0.3, 0.7, FS);
    room.rir_len = 400;
    let rirs = simulate_rir(&room).unwrap();
    let x1 = white_noise(5 * FS as usize, FS, 31);
    let x2 = white_noise(5 * FS as usize, FS, 32);
    let echo = convolve(&x1, rirs.get(0, 0)).add(&convolve(&x2, rirs.get(1, 0))).unwrap().with_len(x1.len());
    let (s1, s2, sd) = (stft(&x1, &p).unwrap(), stft(&x2, &p).unwrap(), stft(&echo, &p).unwrap());
    let fit = ls_oracle_filter(&s1, &s2, &sd, 10).unwrap();
    let spectral = db(sd.energy(), fit.residual_energy);
    let residual = sd.sub(&estimate_echo(&fit.bank, &s1, &s2).unwrap()).unwrap();
    let e = istft(&residual).unwrap();
    let n = echo.len().min(e.len());
    let time = erle(&echo.samples()[..n], &e.samples()[..n]).unwrap().db;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        spectral >= TARGET_DB && secs < 30.0,
        format!("L=10 residual ERLE {spectral:.2} dB in the STFT domain ({time:.2} dB after resynthesis), need >= {TARGET_DB} dB; {secs:.1} s (< 30 s)"),
    )
}

fn gradient_integrity() -> Outcome {
    use common::gradcheck::{check_model, conv, crn_stage, elu_act, gru, losses, TOL};
    let checks = [
        ("conv", conv()),
        ("elu", elu_act()),
        ("gru", gru()),
        ("stage", crn_stage()),
        ("mask head", check_model(Objective::Stage1, "srn.", 500)),
        ("filter stage", check_model(Objective::Stage1, "sle.", 600)),
        ("residual heads", check_model(Objective::Stage2, "csr.", 700)),
        ("losses", losses()),
    ];
    let worst = checks.iter().map(|c| c.1).fold(0.0, f64::max);
    let parts: Vec<String> = checks.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect();
    outcome(worst < TOL, format!("worst relative error {worst:.1e} (< {TOL:.0e}) over 20 instances each: {}", parts.join(", ")))
}

/// Two-second double-talk bundle with single-talk stretches around the
/// near-end utterance.
fn overfit_bundle(dir: &std::path::Path) -> (ExperimentConfig, synth::StoredBundle) {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.corpus.utterance_secs = 1.0;
    cfg.corpus.far_utterances = 2;
    cfg.grid.distances = vec![0.7];
    let cell = synth::Cell { room: [4.0, 3.0, 3.0], t60: 0.3, ser_db: 5.0, snr_db: 30.0, talk_mode: TalkMode::Double };
    let (m, b) = synth::generate_bundle(&cfg, &synth::Corpus::Synthetic, &cell, 0).unwrap();
    synth::write_bundle(dir, &m, &b).unwrap();
    (cfg, read_bundle(dir).unwrap())
}

fn overfit_sanity() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (cfg, bundle) = overfit_bundle(dir.path());
    let ex = training_example(&bundle).unwrap();
    let mut model = SaesModel::init(cfg.model.clone(), 0).unwrap();
    let erle_of = |m: &SaesModel| evaluate(&bundle, "neural", &enhance_bundle(Algo::Neural, &bundle, &cfg, Some(m)).unwrap()).unwrap().erle_db.unwrap();
    let before = erle_of(&model);
    let tc = TrainConfig { stage1_epochs: 300, stage2_epochs: 50, batch_size: 1, seed: 0, crop_frames: None, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() } };
    let report = train_two_stage(&mut model, std::slice::from_ref(&ex), &tc).unwrap();
    let after = erle_of(&model);
    let s1 = &report.stage1_losses;
    let drop = s1[0] / s1.iter().copied().fold(f64::INFINITY, f64::min);
    let blocks: Vec<f64> = report.stage2_losses.chunks(5).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let monotone = blocks.windows(2).all(|w| w[1] < w[0]);
    let secs = start.elapsed().as_secs_f64();
    let pass = report.diverged.is_none() && drop >= 10.0 && monotone && after - before >= 10.0 && secs < 900.0;
    outcome(
        pass,
        format!(
            "stage-1 loss drop {drop:.1}x (>= 10x); stage-2 5-epoch means {} {:.2e} -> {:.2e}; ERLE {before:.2} -> {after:.2} dB (gain >= 10 dB); {secs:.0} s (< 900 s)",
            if monotone { "decreasing" } else { "NOT decreasing" },
            blocks[0],
            blocks[blocks.len() - 1]
        ),
    )
}

fn decaying_path(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|n| rng.random_range(-1.0..1.0) * (-(n as f64) / 12.0).exp()).collect()
}

fn fir(x: &Waveform, h: &[f64]) -> Waveform {
    convolve(x, &Waveform::new(h.to_vec(), FS).unwrap()).with_len(x.len())
}

/// Steady-state ERLE (last quarter) and mean per-path misalignment.
fn nlms_run(x1: &Waveform, x2: &Waveform, h1: &[f64], h2: &[f64]) -> (f64, f64) {
    let y = fir(x1, h1).add(&fir(x2, h2)).unwrap();
    let state = NlmsState::new(NlmsParams { filter_len: h1.len(), mu: 0.5, delta: 1e-6 }).unwrap();
    let (e, state) = nlms_cancel(&y, x1, x2, state).unwrap();
    let tail = 3 * y.len() / 4;
    let steady = erle(&y.samples()[tail..], &e.samples()[tail..]).unwrap().db;
    let mis = 0.5 * (misalignment_db(&state.w1, h1) + misalignment_db(&state.w2, h2));
    (steady, mis)
}

fn nlms_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h1, h2) = (decaying_path(64, &mut rng), decaying_path(64, &mut rng));
    let n = 10 * FS as usize;
    let (erle_ind, mis_ind) = nlms_run(&white_noise(n, FS, 61), &white_noise(n, FS, 62), &h1, &h2);
    let r = white_noise(n, FS, 63);
    let (g1, g2) = (decaying_path(16, &mut rng), decaying_path(16, &mut rng));
    let (erle_cor, mis_cor) = nlms_run(&fir(&r, &g1), &fir(&r, &g2), &h1, &h2);
    let gap = mis_cor - mis_ind;
    outcome(
        erle_ind >= 20.0 && gap >= 10.0,
        format!(
            "independent: ERLE {erle_ind:.1} dB (>= 20), misalignment {mis_ind:.1} dB; common source: ERLE {erle_cor:.1} dB, misalignment {mis_cor:.1} dB; gap {gap:.1} dB (>= 10)"
        ),
    )
}

fn metric_sanity() -> Outcome {
    let y: Vec<f64> = speech_like(1.0, FS, 7).into_samples();
    let tenth: Vec<f64> = y.iter().map(|v| 0.1 * v).collect();
    let e_same = erle(&y, &y).unwrap();
    let e_zero = erle(&y, &vec![0.0; y.len()]).unwrap();
    let e_tenth = erle(&y, &tenth).unwrap();
    let erle_ok = e_same.db == 0.0 && e_zero.clamped && e_zero.db == ERLE_CLAMP_DB && (e_tenth.db - 20.0).abs() < 1e-9;

    let s = speech_like(3.0, FS, 8);
    let self_score = estoi(&s, &s).unwrap();
    let noise = white_noise(s.len(), FS, 9);
    let at = |snr: f64| {
        let g = (s.power() / noise.power() / 10f64.powf(snr / 10.0)).sqrt();
        s.add(&noise.scaled(g)).unwrap()
    };
    let deg = at(10.0);
    let gain_dev = (estoi(&s, &deg).unwrap() - estoi(&s, &deg.scaled(0.37)).unwrap()).abs();
    let sweep: Vec<f64> = [0.0, 10.0, 20.0, 30.0].iter().map(|&snr| estoi(&s, &at(snr)).unwrap()).collect();
    let monotone = sweep.windows(2).all(|w| w[1] > w[0]);
    outcome(
        erle_ok && self_score >= 0.99 && gain_dev <= 1e-6 && monotone,
        format!(
            "ERLE trivial cases {}; ESTOI self {self_score:.4} (>= 0.99), gain deviation {gain_dev:.1e} (<= 1e-6), SNR 0/10/20/30 dB -> {:.3}/{:.3}/{:.3}/{:.3} ({})",
            if erle_ok { "exact" } else { "WRONG" },
            sweep[0],
            sweep[1],
            sweep[2],
            sweep[3],
            if monotone { "increasing" } else { "NOT increasing" }
        ),
    )
}

fn room_t60() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for dims in [[4.0, 3.0, 3.0], [6.0, 4.0, 3.0], [8.0, 7.0, 3.0]] {
        for t60 in [0.3, 0.6, 0.9] {
            let set = simulate_rir(&receiving_room(dims, t60, 0.7, FS)).unwrap();
            let est = estimate_t60(set.get(0, 0)).unwrap();
            let rel = (est - t60).abs() / t60;
            worst = worst.max(rel);
            parts.push(format!("{:.0}x{:.0}x{:.0}/{t60}: {est:.3}", dims[0], dims[1], dims[2]));
        }
    }
    outcome(worst <= 0.2, format!("worst deviation {:.1}% (<= 20%); {}", 100.0 * worst, parts.join(", ")))
}

/// Desk-scale trend check: train on one synthetic grid, score another.
fn trend() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.utterance_secs = 1.5;
    cfg.corpus.far_utterances = 2;
    cfg.grid.t60s = vec![0.3, 0.6];
    cfg.grid.snr_db = vec![20.0];
    cfg.train = TrainConfig { stage1_epochs: 90, stage2_epochs: 60, batch_size: 1, seed: 0, crop_frames: Some(100), adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() } };
    let mut test_cfg = cfg.clone();
    test_cfg.seed = 1000;
    let (train_dir, test_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_synth(&cfg, train_dir.path()).unwrap();
    cmd_synth(&test_cfg, test_dir.path()).unwrap();
    let (_, train) = read_dataset(train_dir.path()).unwrap();
    let (_, test) = read_dataset(test_dir.path()).unwrap();
    let data: Vec<_> = train.iter().map(|b| training_example(b).unwrap()).collect();
    // Stage 1 is shared; the variant then keeps training SLE+SRN alone for
    // as many epochs as the full model spends in stage 2.
    let mut model = SaesModel::init(cfg.model.clone(), 0).unwrap();
    let stage = |m: &mut SaesModel, s1: usize, s2: usize, seed: u64| {
        let tc = TrainConfig { stage1_epochs: s1, stage2_epochs: s2, seed, ..cfg.train.clone() };
        assert!(train_two_stage(m, &data, &tc).unwrap().diverged.is_none());
    };
    stage(&mut model, cfg.train.stage1_epochs, 0, 0);
    let mut variant = model.clone();
    stage(&mut variant, cfg.train.stage2_epochs, 0, 1);
    stage(&mut model, 0, cfg.train.stage2_epochs, 0);

    let order = [Algo::Neural, Algo::SleSrn, Algo::Wiener, Algo::None];
    let mut means = Vec::new();
    for algo in order {
        let rows: Vec<_> = test.iter().map(|b| evaluate(b, algo.label(), &enhance_bundle(algo, b, &cfg, Some(if algo == Algo::SleSrn { &variant } else { &model })).unwrap()).unwrap()).collect();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        means.push((mean(rows.iter().filter_map(|r| r.estoi).collect()), mean(rows.iter().filter_map(|r| r.erle_db).collect())));
    }
    let ordered = |k: fn(&(f64, f64)) -> f64| means.windows(2).all(|w| k(&w[0]) >= k(&w[1]));
    let (estoi_ok, erle_ok) = (ordered(|m| m.0), ordered(|m| m.1));
    let table: Vec<String> = order.iter().zip(&means).map(|(a, m)| format!("{a} {:.3}/{:.1} dB", m.0, m.1)).collect();
    outcome(
        estoi_ok && erle_ok,
        format!(
            "ESTOI/ERLE means on {} test bundles: {}; ESTOI order {}, ERLE order {}; {:.0} s",
            test.len(),
            table.join(", "),
            if estoi_ok { "holds" } else { "BROKEN" },
            if erle_ok { "holds" } else { "BROKEN" },
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("STFT round-trip", stft_round_trip),
        ("multi-frame filter oracle equivalence", multiframe_oracle),
        ("CTF representational capacity", ctf_capacity),
        ("gradient integrity", gradient_integrity),
        ("overfit sanity", overfit_sanity),
        ("NLMS convergence and non-uniqueness", nlms_convergence),
        ("metric sanity", metric_sanity),
        ("room simulator T60", room_t60),
        ("trend-level ordering", trend),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let o = run();
        println!("[{}] {id}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
