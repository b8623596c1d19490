use std::path::{Path, PathBuf};
use std::process::Command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cilab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cilab"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn run_writes_the_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let cfg = configs().join("toy.json");
    let o = cilab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.json",
        "coefficients.csv",
        "forgetting.csv",
        "trace.json",
        "steps.csv",
        "rehearsal.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let coeffs = std::fs::read_to_string(out.join("coefficients.csv")).unwrap();
    assert!(coeffs.starts_with("experiment_id,step,class_id,sic,cic,nic,all_nic,log_sim,degenerate_checkpoints\n"));
    assert_eq!(coeffs.lines().count(), 1 + 3 + 6 + 9);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("toy.json")).unwrap()).unwrap();
    cfg["schema_version"] = 99.into();
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = cilab(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = cilab(&["run", "--config", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn controlled_prints_one_row_per_past_class() {
    let cfg = configs().join("controlled.json");
    let o = cilab(&[
        "controlled",
        "--base-config",
        cfg.to_str().unwrap(),
        "--step",
        "3",
        "--reruns",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("class_id,rho_nic_sic"));
    assert_eq!(text.lines().count(), 1 + 6);

    let o = cilab(&[
        "controlled",
        "--base-config",
        cfg.to_str().unwrap(),
        "--step",
        "3",
        "--reruns",
        "36",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_then_analyze_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let grid = configs().join("bench.json");
    let o = cilab(&[
        "bench",
        "--grid",
        grid.to_str().unwrap(),
        "--per-partition",
        "2",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read(out.join("summary.csv")).unwrap();
    assert_eq!(std::fs::read_dir(out.join("runs")).unwrap().count(), 12);
    let o = cilab(&["analyze", "--dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("summary.csv")).unwrap(), summary);
}
