//! End-to-end checks of the binary: exit codes, artifact layout and
//! byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn qmupl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmupl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.conf");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "\
# small deterministic run
units = natural
kernel = exponential
gamma = 1.0
t_final = 1.0
n_steps = 100
paths = 40
seed = 7
";

#[test]
fn figure_writes_artifacts_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let outs = out.to_string_lossy().into_owned();
    let run = qmupl(&["figure", "fig1", "--out", &outs]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = read(&out, "fig1.csv");
    let meta = read(&out, "fig1.meta.json");
    assert!(!read(&out, "fig1.gp").is_empty());
    assert!(csv.starts_with(b"t_seconds,"));

    let run = qmupl(&["figure", "fig1", "--out", &outs]);
    assert!(run.status.success());
    assert_eq!(csv, read(&out, "fig1.csv"), "rerun must be byte-identical");
    assert_eq!(meta, read(&out, "fig1.meta.json"));
}

#[test]
fn figure_rejects_unknown_name_and_overrides() {
    let run = qmupl(&["figure", "fig9", "--out", "/tmp/unused"]);
    assert_eq!(run.status.code(), Some(2));
    let run = qmupl(&["figure", "fig1", "--seed", "1", "--out", "/tmp/unused"]);
    assert_eq!(run.status.code(), Some(2), "presets are read-only");
}

#[test]
fn ensemble_is_deterministic_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("e");
    let outs = out.to_string_lossy().into_owned();

    let run = qmupl(&["ensemble", "--config", &conf, "--out", &outs]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let first = read(&out, "ensemble.csv");
    assert!(first.starts_with(b"time,mean_q,se_q,"));
    assert!(!read(&out, "ensemble.meta.json").is_empty());

    let run = qmupl(&["ensemble", "--config", &conf, "--out", &outs]);
    assert!(run.status.success());
    assert_eq!(first, read(&out, "ensemble.csv"));

    let run = qmupl(&["ensemble", "--config", &conf, "--out", &outs, "--seed", "8"]);
    assert!(run.status.success());
    assert_ne!(first, read(&out, "ensemble.csv"));
}

#[test]
fn simulate_writes_per_path_observables() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("s");
    let outs = out.to_string_lossy().into_owned();
    let run = qmupl(&["simulate", "--config", &conf, "--paths", "5", "--out", &outs]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = String::from_utf8(read(&out, "trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time,path,sigma,mean_q,mean_p,energy"
    );
    // 5 paths x 11 report nodes
    assert_eq!(lines.count(), 55);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "bogus_key = 1\n");
    let run = qmupl(&["ensemble", "--config", &conf]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("unknown key"));

    let conf = write_config(tmp.path(), "kernel = exponential\n");
    let run = qmupl(&["ensemble", "--config", &conf]);
    assert_eq!(run.status.code(), Some(2), "missing gamma");

    let run = qmupl(&["ensemble", "--config", "/nonexistent/x.conf"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn noise_test_passes_for_white_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "kernel = white\nt_final = 1.0\nn_steps = 64\npaths = 400\n");
    let out = tmp.path().join("n");
    let outs = out.to_string_lossy().into_owned();
    let run = qmupl(&["noise-test", "--config", &conf, "--out", &outs]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(read(&out, "noise-test.csv").starts_with(b"t_i,t_j,"));
}

#[test]
fn validate_single_group_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let outs = tmp.path().to_string_lossy().into_owned();
    // group 3 is deterministic and fast
    let run = qmupl(&["validate", "--group", "3", "--out", &outs]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&read(tmp.path(), "validation.json")).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
    let run = qmupl(&["validate", "--group", "12", "--out", &outs]);
    assert_eq!(run.status.code(), Some(2));
}
