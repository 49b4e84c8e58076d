use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
seed = 3
[data]
source = "synthetic"
households = 3
days = 12
[pipeline.anomaly]
anomaly_fraction = 0.5
[lstm]
hidden = 4
[train]
epochs = 2
[federation]
rounds = 2
"#;

fn meterguard(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meterguard"))
        .current_dir(dir)
        .env_remove("METERGUARD_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn synth_data_writes_every_hour() {
    let dir = tempfile::tempdir().unwrap();
    let out = meterguard(
        dir.path(),
        &["synth-data", "--households", "2", "--days", "3", "--out", "s.csv"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("household_id,timestamp,kwh"));
    assert_eq!(lines.count(), 2 * 3 * 24);
}

#[test]
fn baseline_run_emits_one_row_without_asr() {
    let dir = tiny_dir();
    let out = meterguard(dir.path(), &["federate", "-c", "tiny.toml", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in [
        "metrics.csv",
        "config.toml",
        "manifest.json",
        "rounds-clean.jsonl",
        "model-clean.mgwt",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("lstm-federated,none,"));
    assert!(rows[0].ends_with(','), "asr column should be empty: {}", rows[0]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed model_init"));

    let report = meterguard(dir.path(), &["report", "run"]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("lstm-federated"));
}

#[test]
fn same_seed_gives_identical_metrics_bytes() {
    let dir = tiny_dir();
    let central = TINY.replace("[federation]\nrounds = 2\n", "");
    std::fs::write(dir.path().join("central.toml"), central).unwrap();
    for out in ["a", "b"] {
        let o = meterguard(
            dir.path(),
            &["train", "-c", "central.toml", "--attack", "awgn", "--out", out],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &str| std::fs::read(dir.path().join(d).join("metrics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let manifest = |d: &str| std::fs::read(dir.path().join(d).join("manifest.json")).unwrap();
    assert_eq!(manifest("a"), manifest("b"));
}

#[test]
fn epsilon_sweep_has_one_row_per_point_and_family() {
    let dir = tiny_dir();
    let out = meterguard(
        dir.path(),
        &[
            "sweep",
            "-c",
            "tiny.toml",
            "--set",
            "protocol=\"inference_attack\"",
            "--epsilons",
            "0.1,0.2,0.4,0.5,0.8",
            "--families",
            "fgsm,pgd",
            "--set",
            "attack.pgd_iters=2",
            "--out",
            "sw",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("sw/accuracy_vs_epsilon.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("epsilon,attack,accuracy"));
    assert_eq!(lines.count(), 10);
    let metrics = std::fs::read_to_string(dir.path().join("sw/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 1 + 10);
}

#[test]
fn check_prints_filled_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = meterguard(dir.path(), &["attack-eval", "--attack", "pgd", "--check"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in [
        "poison_fraction = 0.3",
        "pgd_iters = 10",
        "awgn_variance = 0.1",
        "threshold = 0.5",
        "[federation]",
    ] {
        assert!(text.contains(needle), "missing `{needle}` in\n{text}");
    }
    assert!(!dir.path().join("experiment").exists(), "--check must not compute");
}

#[test]
fn config_errors_exit_2_and_list_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = meterguard(
        dir.path(),
        &[
            "federate",
            "--attack",
            "pgd",
            "--malicious",
            "20",
            "--set",
            "threshold=1.5",
            "--check",
        ],
    );
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("exceeds 19"), "{err}");
    assert!(err.contains("threshold"), "{err}");

    let unknown = meterguard(dir.path(), &["train", "--set", "no_such_field=1"]);
    assert_eq!(code(&unknown), 2);
    let bad_flag = meterguard(dir.path(), &["train", "--model", "cnn"]);
    assert_eq!(code(&bad_flag), 2);
}

#[test]
fn non_finite_training_exits_3() {
    let dir = tiny_dir();
    let central = TINY.replace("[federation]\nrounds = 2\n", "");
    std::fs::write(dir.path().join("central.toml"), central).unwrap();
    let out = meterguard(
        dir.path(),
        &[
            "train",
            "-c",
            "central.toml",
            "--set",
            "train.schedule.base=1e308",
            "--out",
            "nan",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = meterguard(
        dir.path(),
        &[
            "train",
            "--set",
            "data.source=\"csv\"",
            "--set",
            "data.path=\"absent.csv\"",
            "--check",
        ],
    );
    // --check validates without reading data
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = meterguard(
        dir.path(),
        &[
            "train",
            "--set",
            "data.source=\"csv\"",
            "--set",
            "data.path=\"absent.csv\"",
        ],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let report = meterguard(dir.path(), &["report", "nowhere"]);
    assert_eq!(code(&report), 4);
}
