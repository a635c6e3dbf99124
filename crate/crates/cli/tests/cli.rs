use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[corpus]
utterance_secs = 1.5
far_utterances = 2

[grid]
rooms = [[4.0, 3.0, 3.0]]
t60s = [0.3]
distances = [0.5]
ser_db = [0.0, 10.0]
snr_db = [20.0]

[nlms]
filter_len = 128
"#;

fn saec(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saec")).args(args).env("SAEC_OUTPUT_ROOT", root).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn print_defaults_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = saec(&["config", "print-defaults"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg = saec::harness::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, saec::harness::ExperimentConfig::default());
    let path = write_config(dir.path(), &text);
    assert!(saec(&["config", "validate", &path], dir.path()).status.success());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "[grid]\nsnr_db = []\n");
    let o = saec(&["--config", &bad, "synth"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let unknown = write_config(dir.path(), "colour = 3\n");
    assert_eq!(saec(&["--config", &unknown, "synth"], dir.path()).status.code(), Some(2));

    let missing = write_config(dir.path(), "[corpus]\nnear_dir = \"/no/such/near\"\nnoise_dir = \"/no/such/noise\"\n");
    let o = saec(&["--config", &missing, "synth"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/near") && stderr(&o).contains("/no/such/noise"), "{}", stderr(&o));

    assert_eq!(saec(&["run", "--algo", "magic"], dir.path()).status.code(), Some(2));
    assert_eq!(saec(&["--config", "/no/such.toml", "synth"], dir.path()).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = saec(&["run", "--algo", "none"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(saec(&["eval"], dir.path()).status.code(), Some(3));
}

#[test]
fn pipeline_under_output_root() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(cfg_dir.path(), TINY);
    let root = tempfile::tempdir().unwrap();
    for args in [
        vec!["--config", &cfg, "synth"],
        vec!["--config", &cfg, "run", "--algo", "none"],
        vec!["--config", &cfg, "run", "--algo", "wiener", "--wiener-floor", "0.1"],
        vec!["--config", &cfg, "--jobs", "1", "run", "--algo", "nlms", "--nlms-mu", "0.3"],
        vec!["--config", &cfg, "eval"],
    ] {
        let o = saec(&args, root.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let r = root.path();
    assert!(r.join("dataset/dataset.toml").is_file());
    for algo in ["none", "wiener", "nlms"] {
        assert!(r.join("enhanced").join(algo).join("b00001.wav").is_file());
    }
    let per_file = std::fs::read_to_string(r.join("eval/per_file.csv")).unwrap();
    assert_eq!(per_file.lines().count(), 1 + 3 * 2);
    assert!(std::fs::read_to_string(r.join("eval/summary.csv")).unwrap().starts_with("noise,snr_db,algo"));

    let o = saec(&["--config", &cfg, "run", "--algo", "neural"], r);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = saec(&["--config", &cfg, "run", "--algo", "nlms", "--nlms-mu", "-1"], r);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_run_neural() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(cfg_dir.path(), &format!("{TINY}\n[train]\nstage1_epochs = 1\nstage2_epochs = 1\ncrop_frames = 50\n"));
    let root = tempfile::tempdir().unwrap();
    for args in [
        vec!["--config", &cfg, "synth"],
        vec!["--config", &cfg, "train"],
        vec!["--config", &cfg, "run", "--algo", "neural", "--checkpoint", &root.path().join("checkpoint").to_string_lossy()],
        vec!["--config", &cfg, "run", "--algo", "sle-srn", "--checkpoint", &root.path().join("checkpoint").to_string_lossy()],
        vec!["--config", &cfg, "eval"],
    ] {
        let o = saec(&args, root.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let losses = std::fs::read_to_string(root.path().join("checkpoint/losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3, "{losses}");
    let per_file = std::fs::read_to_string(root.path().join("eval/per_file.csv")).unwrap();
    assert_eq!(per_file.lines().count(), 1 + 2 * 2);
}

#[test]
fn synthesis_independent_of_jobs() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = write_config(cfg_dir.path(), TINY);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(saec(&["--config", &cfg, "--jobs", "1", "synth"], a.path()).status.success());
    assert!(saec(&["--config", &cfg, "--jobs", "3", "synth"], b.path()).status.success());
    for id in ["b00000", "b00001"] {
        for f in ["mic.wav", "far1.wav", "far2.wav", "echo.wav", "near.wav", "noise.wav", "manifest.toml"] {
            let p = format!("dataset/bundles/{id}/{f}");
            assert_eq!(std::fs::read(a.path().join(&p)).unwrap(), std::fs::read(b.path().join(&p)).unwrap(), "{p}");
        }
    }
    assert_eq!(
        std::fs::read(a.path().join("dataset/dataset.toml")).unwrap(),
        std::fs::read(b.path().join("dataset/dataset.toml")).unwrap()
    );
}
