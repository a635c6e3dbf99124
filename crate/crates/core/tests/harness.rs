use std::path::Path;

use saec::dsp::{wav, Waveform};
use saec::harness::{cmd_eval, cmd_run, cmd_synth, read_dataset, synth, Algo, ExperimentConfig, TalkMode};
use saec::neural::{checkpoint, SaesModel};
use saec::scenario::{active_mask, ACTIVITY_FRAME, ACTIVITY_RANGE_DB};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 11;
    cfg.corpus.utterance_secs = 0.6;
    cfg.corpus.far_utterances = 2;
    cfg.grid.rooms = vec![[4.0, 3.0, 3.0]];
    cfg.grid.t60s = vec![0.2];
    cfg.grid.distances = vec![0.5];
    cfg.grid.ser_db = vec![0.0, 5.0, 10.0];
    cfg.grid.snr_db = vec![10.0, 20.0];
    cfg.grid.talk_modes = vec![TalkMode::Double, TalkMode::Single];
    cfg.nlms.filter_len = 256;
    cfg
}

fn power_over(x: &[f64], mask: &[bool]) -> f64 {
    let (s, n) = x.iter().zip(mask).filter(|(_, m)| **m).fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    s / n as f64
}

fn db(a: f64, b: f64) -> f64 {
    10.0 * (a / b).log10()
}

#[test]
fn synthesis_covers_grid_and_hits_targets() {
    let cfg = small_config();
    assert_eq!(cfg.grid.bundle_count(), 12);
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_synth(&cfg, dir.path()).unwrap();
    assert_eq!(m.bundles.len(), 12);
    let (_, bundles) = read_dataset(dir.path()).unwrap();
    let mut doubles = 0;
    for b in &bundles {
        let man = &b.manifest;
        assert!((man.measured_snr_db.unwrap() - man.snr_db).abs() < 0.01, "{}: snr {:?}", man.id, man.measured_snr_db);
        let sd: Vec<f64> = b.echo.samples().iter().zip(b.near.samples()).map(|(d, s)| d + s).collect();
        assert!((db(sd.iter().map(|v| v * v).sum(), b.noise.samples().iter().map(|v| v * v).sum()) - man.snr_db).abs() < 0.05);
        match man.talk_mode {
            TalkMode::Double => {
                doubles += 1;
                let target = man.ser_db.unwrap();
                assert!((man.measured_ser_db.unwrap() - target).abs() < 0.01, "{}: ser {:?}", man.id, man.measured_ser_db);
                let mask = active_mask(&b.near, ACTIVITY_FRAME, ACTIVITY_RANGE_DB);
                let ser = db(power_over(b.near.samples(), &mask), power_over(b.echo.samples(), &mask));
                assert!((ser - target).abs() < 0.05, "{}: stored ser {ser}", man.id);
            }
            TalkMode::Single => {
                assert!(man.ser_db.is_none());
                assert!(b.near.samples().iter().all(|&v| v == 0.0));
            }
        }
        let mic: Vec<f64> = (0..man.samples).map(|i| b.echo.samples()[i] + b.near.samples()[i] + b.noise.samples()[i]).collect();
        let worst = mic.iter().zip(b.mic.samples()).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(worst < 2.0 / 32768.0, "mixture mismatch {worst}");
    }
    assert_eq!(doubles, 6);
}

#[test]
fn synthesis_is_deterministic() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_synth(&cfg, a.path()).unwrap();
    cmd_synth(&cfg, b.path()).unwrap();
    let (ma, ba) = read_dataset(a.path()).unwrap();
    let (mb, bb) = read_dataset(b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ba, bb);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    cmd_synth(&other, c.path()).unwrap();
    let (_, bc) = read_dataset(c.path()).unwrap();
    assert_ne!(ba[0].mic, bc[0].mic);
}

fn read_out(dir: &Path, algo: &str, id: &str) -> Waveform {
    wav::read(dir.join(algo).join(format!("{id}.wav"))).unwrap()
}

#[test]
fn run_and_eval_end_to_end() {
    let mut cfg = small_config();
    cfg.grid.ser_db = vec![5.0];
    cfg.grid.snr_db = vec![30.0];
    let root = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, root.path()).unwrap();
    let (_, bundles) = read_dataset(root.path()).unwrap();
    let out = tempfile::tempdir().unwrap();

    assert_eq!(cmd_run(&cfg, root.path(), Algo::None, None, out.path()).unwrap().files, 2);
    for b in &bundles {
        assert_eq!(read_out(out.path(), "none", &b.manifest.id), b.mic);
    }

    cmd_run(&cfg, root.path(), Algo::Nlms, None, out.path()).unwrap();
    cmd_run(&cfg, root.path(), Algo::Wiener, None, out.path()).unwrap();
    for algo in ["nlms", "wiener"] {
        for b in &bundles {
            let w = read_out(out.path(), algo, &b.manifest.id);
            assert_eq!(w.len(), b.mic.len());
            assert!(w.samples().iter().all(|v| v.is_finite()));
        }
    }
    assert!(out.path().join("nlms").join("run.log").is_file());

    assert!(cmd_run(&cfg, root.path(), Algo::Neural, None, out.path()).is_err());
    let model = SaesModel::init(cfg.model.clone(), 0).unwrap().zeros_like();
    let ck = tempfile::tempdir().unwrap();
    checkpoint::save(&model, ck.path()).unwrap();
    cmd_run(&cfg, root.path(), Algo::Neural, Some(ck.path()), out.path()).unwrap();
    for b in &bundles {
        // zero filters, mask 0.5, zero residual
        let w = read_out(out.path(), "neural", &b.manifest.id);
        let worst = w.samples().iter().zip(b.mic.samples()).map(|(o, m)| (o - 0.5 * m).abs()).fold(0.0, f64::max);
        assert!(worst < 2.0 / 32768.0, "{worst}");
    }

    let ev = tempfile::tempdir().unwrap();
    let res = cmd_eval(root.path(), out.path(), ev.path()).unwrap();
    assert_eq!(res.rows.len(), 8);
    for r in &res.rows {
        let b = bundles.iter().find(|b| b.manifest.id == r.id).unwrap();
        assert_eq!(r.estoi.is_some(), b.manifest.talk_mode == TalkMode::Double);
        assert!(r.erle_db.is_some());
        if r.algo == "none" {
            assert!(r.erle_db.unwrap().abs() < 1e-9);
        }
        if r.algo == "neural" {
            assert!((r.erle_db.unwrap() - 20.0 * 2f64.log10()).abs() < 0.05, "{r:?}");
        }
    }
    assert!(ev.path().join("per_file.csv").is_file());
    let summary = std::fs::read_to_string(ev.path().join("summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().contains("pesq"));
    assert_eq!(summary.lines().count(), 1 + res.summary.len());
}

#[test]
fn eval_reports_missing_outputs() {
    let mut cfg = small_config();
    cfg.grid.ser_db = vec![5.0];
    cfg.grid.snr_db = vec![30.0];
    cfg.grid.talk_modes = vec![TalkMode::Double];
    let root = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, root.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(out.path().join("nlms")).unwrap();
    let err = cmd_eval(root.path(), out.path(), out.path()).unwrap_err();
    assert!(matches!(err, saec::Error::MissingPaths(_)), "{err}");
    let _ = synth::BUNDLES_DIR;
}

#[test]
fn single_talk_mask_excludes_near_region() {
    let mut cfg = small_config();
    cfg.grid.ser_db = vec![0.0];
    cfg.grid.snr_db = vec![30.0];
    cfg.grid.talk_modes = vec![TalkMode::Double];
    let root = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, root.path()).unwrap();
    let (_, bundles) = read_dataset(root.path()).unwrap();
    let b = &bundles[0];
    let mask = saec::harness::single_talk_mask(b);
    let (lo, hi) = (b.manifest.near_offset, b.manifest.near_offset + b.manifest.near_len);
    assert!(mask[lo..hi].iter().all(|m| !m));
    assert!(mask.iter().any(|&m| m));
    assert!(b.near.samples()[..lo].iter().chain(&b.near.samples()[hi..]).all(|&v| v == 0.0));
}

#[test]
fn eval_flags_perfect_near_end_copy() {
    let mut cfg = small_config();
    cfg.grid.ser_db = vec![5.0];
    cfg.grid.snr_db = vec![30.0];
    cfg.grid.talk_modes = vec![TalkMode::Double];
    let root = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, root.path()).unwrap();
    let (_, bundles) = read_dataset(root.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(out.path().join("oracle")).unwrap();
    for b in &bundles {
        wav::write(out.path().join("oracle").join(format!("{}.wav", b.manifest.id)), &b.near).unwrap();
        assert!(saec::metrics::estoi(&b.mic, &b.mic).unwrap() >= 0.99);
    }
    let res = cmd_eval(root.path(), out.path(), out.path()).unwrap();
    for r in &res.rows {
        assert!(r.erle_clamped, "{r:?}");
        assert_eq!(r.erle_db, Some(saec::metrics::ERLE_CLAMP_DB));
        assert!(r.estoi.unwrap() >= 0.99);
    }
    assert_eq!(res.summary[0].clamped_files, bundles.len());
}
