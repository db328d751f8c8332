use std::fs;
use std::process::{Command, Output};

fn eunomia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eunomia"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn printed_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = eunomia(&["config", "--protocol", "s-seq"]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("s-seq.toml");
    fs::write(&path, &out.stdout).unwrap();
    let v = eunomia(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stderr));
    assert_eq!(v.stdout, out.stdout);
}

#[test]
fn config_errors_exit_1_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[network]\nbatch_loss_rate = 1.5\n").unwrap();
    let out = eunomia(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_loss_rate"));

    assert_eq!(eunomia(&["config", "--protocol", "paxos"]).status.code(), Some(1));
    assert_eq!(eunomia(&["suite", "--suite", "nope"]).status.code(), Some(1));
    assert_eq!(eunomia(&["check", "/nonexistent/trace.jsonl"]).status.code(), Some(1));
}

#[test]
fn short_run_then_check_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "duration_ms = 1500\ndrain_ms = 1000\n[workload]\nwarmup_ms = 200\ncooldown_ms = 200\n").unwrap();
    let out_dir = dir.path().join("out");
    let run = eunomia(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let vis = fs::read_to_string(out_dir.join("visibility.csv")).unwrap();
    assert!(vis.lines().count() > 1);
    let check = eunomia(&["check", out_dir.join("trace.jsonl").to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(0));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let e = eunomia(&["check", empty.to_str().unwrap()]);
    assert_eq!(e.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&e.stdout).contains("no events"));
}
