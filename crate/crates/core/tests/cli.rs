use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ring-bifurcate"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ring_prints_full_precision_radius() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "ring", "n = 3\nmu = 1\n", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = read(dir.path(), "ring.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "n,mu,s1,omega,residual");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let s1: f64 = row[2].parse().unwrap();
    assert!((s1 - 1.0 / 3f64.sqrt()).abs() <= f64::EPSILON);
    assert!(row[2].len() >= 17);
    assert_eq!(read(dir.path(), "bodies.csv").lines().count(), 5);
}

#[test]
fn unknown_key_is_rejected_with_line() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "ring", "n = 3\n\nfrobnicate = 2\n", &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("run.cfg:3:"), "{err}");
    assert!(err.contains("frobnicate"), "{err}");
}

#[test]
fn empty_frequency_range_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "scan", "nu_min = 2\nnu_max = 1\n", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.cfg:"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ring-bifurcate"))
        .args(["ring", "--config"])
        .arg(dir.path().join("absent.cfg"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn event_out_of_range_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "continue", "n = 3\nmu = 1\n", &["--event", "9999"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_reports_every_check() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "verify", "n = 3\nmu = 1\n", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = read(dir.path(), "verify.csv");
    assert!(csv.starts_with("check,value,tolerance,passed\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
}

#[test]
fn coarse_verification_step_fails_with_code_three() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "verify", "n = 3\nmu = 1\ndt_check = 1\n", &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(read(dir.path(), "verify.csv").contains(",false"));
}

#[test]
fn outputs_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = "problem = satellite\nn = 2\nmu = 0\nsteps = 3\n";
    for cmd in ["equilibria", "scan", "continue"] {
        let ea = ["--event", "2"];
        let extra: &[&str] = if cmd == "continue" { &ea } else { &[] };
        assert_eq!(run(a.path(), cmd, cfg, extra).status.code(), Some(0));
        assert_eq!(run(b.path(), cmd, cfg, extra).status.code(), Some(0));
    }
    for name in ["equilibria.csv", "events.csv", "branch.json", "branch_metrics.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let json: serde_json::Value = serde_json::from_str(&read(a.path(), "branch.json")).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["points"].as_array().unwrap().len(), 4);
}

#[test]
fn satellite_scan_matches_predicted_planar_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = "problem = satellite\nn = 2\nmu = 0\n";
    assert_eq!(run(dir.path(), "equilibria", cfg, &[]).status.code(), Some(0));
    assert_eq!(run(dir.path(), "scan", cfg, &[]).status.code(), Some(0));
    let eq = read(dir.path(), "equilibria.csv");
    let predicted: usize = eq.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let events = read(dir.path(), "events.csv");
    let planar = events.lines().skip(1).filter(|l| l.split(',').nth(3) == Some("planar")).count();
    assert_eq!(planar, predicted, "{events}");
}
