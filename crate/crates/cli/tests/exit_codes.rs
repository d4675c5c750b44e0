use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twistmetric"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"))
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(["--threads", "1", "--log-level", "warn"])
        .args(args)
        .output()
        .unwrap()
}

const SMALL_SECOND: &str = r#"
[surface]
mode = "sphere_chart"
punctures = [[0.0, 0.0]]
disk_radius = 1.0
chart_radius = 2.5

[[singular]]
kind = "second"
slots = [[[1, 1.0]]]

[grid]
background = 48
angular = 96
rings_per_octave = 6
r_min = 1e-3
far_angular = 48
far_factor = 20.0
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_accepts_every_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "trivial",
        "second_kind_k1",
        "second_kind_k2",
        "third_kind_pm1",
        "torus_twisted",
    ] {
        let o = run(&["validate"], &shipped(name), dir.path());
        assert_eq!(
            o.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn residue_sum_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(shipped("third_kind_pm1"))
        .unwrap()
        .replace("residues = [-1.0]", "residues = [-0.5]");
    let o = run(&["solve"], &write_config(dir.path(), &text), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("residue sum"));
}

#[test]
fn missing_or_malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate"], &dir.path().join("absent.toml"), dir.path());
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "[surface]\nmode = \"klein\"\n");
    assert_eq!(run(&["validate"], &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn trivial_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped("trivial");
    assert_eq!(run(&["solve"], &cfg, dir.path()).status.code(), Some(0));
    for f in [
        "field.txt",
        "solve_report.json",
        "timings.json",
        "verification.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("solve_report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["mu"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(run(&["verify"], &cfg, dir.path()).status.code(), Some(0));
    assert_eq!(run(&["plot"], &cfg, dir.path()).status.code(), Some(0));
    assert!(dir.path().join("log_det.svg").exists());
}

#[test]
fn non_convergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_SECOND}\n[solver]\nmax_outer = 1\n");
    let o = run(&["solve"], &write_config(dir.path(), &text), dir.path());
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // artifacts are still written
    assert!(dir.path().join("solve_report.json").exists());
}

#[test]
fn verification_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_SECOND}\n[analysis]\ncoefficient_tol = 1e-12\n");
    let cfg = write_config(dir.path(), &text);
    let o = run(&["solve"], &cfg, dir.path());
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(run(&["verify"], &cfg, dir.path()).status.code(), Some(4));
}
