use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn airform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airform")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn short_scenario(dir: &Path, duration: f64) -> std::path::PathBuf {
    let p = dir.join("short.toml");
    fs::write(&p, format!("[sim]\nduration = {duration}\nwarmup = 0.0\n")).unwrap();
    p
}

#[test]
fn orbit_writes_tables() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("orbit");
    let o = airform(&["orbit", "--out", path(&out), "--grid", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("feasibility.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 25);
    for f in ["reference.csv", "feasibility.svg", "orbit.svg", "manifest.json", "scenario.toml"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("max subject speed"));
}

#[test]
fn zero_duration_sim_succeeds() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_scenario(tmp.path(), 0.0);
    let out = tmp.path().join("sim");
    let o = airform(&["sim", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("log.csv").exists());
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn same_seed_reproduces_log() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_scenario(tmp.path(), 12.0);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = airform(&["sim", "--config", path(&cfg), "--out", path(out), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("log.csv")).unwrap(), fs::read(b.join("log.csv")).unwrap());

    let c = tmp.path().join("c");
    let replay = a.join("scenario.toml");
    let o = airform(&["sim", "--config", path(&replay), "--out", path(&c)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("log.csv")).unwrap(), fs::read(c.join("log.csv")).unwrap());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "sim");
}

#[test]
fn sweep_rejects_empty_values() {
    let tmp = TempDir::new().unwrap();
    let o = airform(&["sweep", "--out", path(tmp.path()), "--axis", "wind", "--values", ""]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty value list"));
}

#[test]
fn sweep_over_seeds() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_scenario(tmp.path(), 8.0);
    let out = tmp.path().join("sweep");
    let o = airform(&["sweep", "--config", path(&cfg), "--out", path(&out), "--axis", "seed", "--values", "1,2", "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("summary.csv").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[sim]\nduraton = 5.0\n").unwrap();
    let o = airform(&["sim", "--config", path(&cfg), "--out", path(&tmp.path().join("x"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("duraton"));
}

#[test]
fn solve_runs_a_study() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("min-speed");
    let o = airform(&["solve", "--study", "min-speed", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "cost.csv", "trajectory.svg", "cost.svg", "radius.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("radius error"));

    let o = airform(&["solve", "--study", "loiter", "--out", path(&out)]);
    assert!(!o.status.success());
}
