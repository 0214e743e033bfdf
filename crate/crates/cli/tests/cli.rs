use std::path::Path;
use std::process::{Command, Output};

fn degenwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degenwave"))
        .args(args)
        .output()
        .expect("spawn degenwave")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn dry_run_prints_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lambdas = [8, 16]\n");
    let out = degenwave(&["norm_growth", "--config", &cfg, "--dry-run"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["experiment"], "norm_growth");
    assert_eq!(v["lambdas"], serde_json::json!([8, 16]));
}

#[test]
fn passing_run_writes_tables_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = packet_validate\n");
    let res = dir.path().join("res");
    let out = degenwave(&[
        "packet_validate",
        "--config",
        &cfg,
        "--out",
        res.to_str().unwrap(),
        "--plot-data",
        "--threads",
        "1",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS"));
    assert!(res.join("report.json").exists());
    assert!(res.join("packet_validate_8.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
}

#[test]
fn failing_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[tolerances]\nerr_psi_max = 1e-30\n");
    let res = dir.path().join("res");
    let out = degenwave(&[
        "packet_validate",
        "--config",
        &cfg,
        "--out",
        res.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\nnx = many\n");
    let out = degenwave(&["norm_growth", "--config", &cfg, "--dry-run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    // the file names a different experiment
    let cfg = write_config(dir.path(), "experiment = rays\n");
    assert_eq!(
        degenwave(&["norm_growth", "--config", &cfg, "--dry-run"])
            .status
            .code(),
        Some(1)
    );
    let out = degenwave(&["warp_drive", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let out = degenwave(&["rays", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}
