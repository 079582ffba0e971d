use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
[mdp]
s_max = 4
n_max = 3
[generator]
mean_sessions_per_day = 3.0
[network]
hidden = [8]
epochs = 2
batch_size = 64
[experiment]
n_traj = [20]
months = [1]
bench_repetitions = 1
"#;

fn evflex(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("run.toml");
    if !config.exists() {
        fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_evflex"))
        .args(args)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_sessions_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let stdout = ok(&evflex(
        dir.path(),
        &["gen-sessions", "--out", out.to_str().unwrap()],
    ));
    assert!(stdout.contains("sessions.csv"));
    let csv = fs::read_to_string(out.join("sessions.csv")).unwrap();
    assert!(csv.starts_with("day,arrival_slot,duration_slots,charge_slots\n"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("gen-sessions.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["run"], 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn train_then_evaluate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let stdout = ok(&evflex(
        dir.path(),
        &["train", "--mode", "updated", "--out", a.to_str().unwrap()],
    ));
    assert!(stdout.contains("qnet-updated-n20-m1-s3.bin"));
    assert!(a.join("train-updated-n20-m1-s3.csv").exists());

    // Reuses the checkpoint written by `train`.
    let stdout = ok(&evflex(
        dir.path(),
        &[
            "evaluate",
            "--mode",
            "updated",
            "--out",
            a.to_str().unwrap(),
        ],
    ));
    assert!(!stdout.contains(".bin"));
    ok(&evflex(
        dir.path(),
        &[
            "evaluate",
            "--mode",
            "updated",
            "--out",
            b.to_str().unwrap(),
        ],
    ));

    for name in ["costs.csv", "normalized.csv", "flex.csv", "report.json"] {
        assert!(
            fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
    let costs = fs::read_to_string(a.join("costs.csv")).unwrap();
    assert!(costs.starts_with("day,policy,cost,shortfall_slots\n"));
    assert_eq!(costs.lines().count(), 1 + 92 * 4);
}

#[test]
fn gen_experience_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    ok(&evflex(
        dir.path(),
        &["gen-experience", "--ntraj", "5", "--out", o],
    ));
    let text = fs::read_to_string(out.join("experience-old-n5-m1-s3.csv")).unwrap();
    assert!(text.starts_with("# evflex experience v1\n"));
    assert!(out.join("experience-updated-n5-m1-s3.csv").exists());

    let stderr = evflex(dir.path(), &["bench", "--ntraj", "5", "--out", o]);
    ok(&stderr);
    let bench = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);
    assert!(out.join("bench_summary.csv").exists());
}

#[test]
fn invalid_input_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = evflex(dir.path(), &["train", "--months", "12"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment.months"));

    let out = evflex(dir.path(), &["train", "--mode", "greedy"]);
    assert!(!out.status.success());

    let out = evflex(dir.path(), &["frobnicate"]);
    assert!(!out.status.success());

    let out = Command::new(env!("CARGO_BIN_EXE_evflex"))
        .args(["train", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.toml"));
}
