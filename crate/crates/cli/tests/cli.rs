use serde_json::{json, Value};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cfg: &Value, dir: &Path) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_matmob"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn base() -> Value {
    json!({
        "model": {
            "space": {"kind": "cuboid", "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
            "family": {"family": "fully-decoupled", "mobilities": [{"kind": "quadratic"}, {"kind": "quadratic"}]}
        },
        "grid": {"x_min": -1.0, "x_max": 1.0, "cells": 16},
        "initial": {"kind": "gaussian-bump", "background": [0.4, 0.5], "amplitude": [0.2, -0.2], "center": 0.0, "sigma": 0.2},
        "energy": {"f": "0.5*z1^2 + 0.5*z2^2", "c_f": 1.0, "reference": [0.5, 0.5], "case": "B"}
    })
}

#[test]
fn identical_endpoints_give_zero() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["target"] = cfg["initial"].clone();
    let o = run(&["distance"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "0.0");
    assert!(d.path().join("out/resolved_config.json").exists());
    assert!(d.path().join("out/summary.csv").exists());
}

#[test]
fn strict_condition_fails_with_witness() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["conditions"] = json!({"checks": ["c1", "c2-strict"], "plan": {"points": {"scheme": "low-discrepancy", "count": 200, "seed": 3}, "directions": 16, "margin": 1e-3}});
    let o = run(&["check-conditions"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("witness"));
    let csv = fs::read_to_string(d.path().join("out/conditions.csv")).unwrap();
    assert!(csv.contains("Fail") && csv.contains("Pass"));
}

#[test]
fn config_errors_exit_64() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["surprise"] = json!(1);
    let o = run(&["distance"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("surprise"));
    // a missing block
    let o = run(&["jko"], &base(), d.path());
    assert_eq!(o.status.code(), Some(64));
    // unequal masses cannot be connected
    let mut cfg = base();
    cfg["target"] = json!({"kind": "gaussian-bump", "background": [0.4, 0.5], "amplitude": [0.1, -0.2], "center": 0.3, "sigma": 0.2});
    assert_eq!(run(&["distance"], &cfg, d.path()).status.code(), Some(64));
}

#[test]
fn cfl_violation_exits_65() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["fd"] = json!({"t_end": 0.1, "config": {"dt": 0.05}});
    let o = run(&["fd-solve"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(65), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn geodesic_export_and_csv_input() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["target"] = json!({"kind": "gaussian-bump", "background": [0.4, 0.5], "amplitude": [0.2, -0.2], "center": 0.3, "sigma": 0.2});
    cfg["match_target_mass"] = json!(true);
    cfg["distance"] = json!({"steps": 4});
    let o = run(&["geodesic"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dist: f64 = stdout(&o).trim().parse().unwrap();
    assert!(dist > 0.0);
    let geo = fs::read_to_string(d.path().join("out/geodesic.csv")).unwrap();
    assert!(geo.starts_with("t,x,mu_1,mu_2,w_1,w_2"));
    assert_eq!(geo.lines().count(), 1 + 4 * 17);

    // feed the final slice back in as a CSV target: same distance
    let dens = fs::read_to_string(d.path().join("out/densities.csv")).unwrap();
    let mut csv = String::from("x,mu_1,mu_2\n");
    for line in dens.lines().skip(1).filter(|l| l.starts_with("4,")) {
        let f: Vec<&str> = line.split(',').collect();
        csv.push_str(&format!("{},{},{}\n", f[2], f[3], f[4]));
    }
    let target = d.path().join("target.csv");
    fs::write(&target, csv).unwrap();
    cfg["target"] = json!({"kind": "csv", "path": target});
    cfg["match_target_mass"] = json!(false);
    let o = run(&["distance"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let again: f64 = stdout(&o).trim().parse().unwrap();
    assert!((again - dist).abs() <= 1e-12 * dist);
}

#[test]
fn jko_then_diagnose_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["jko"] = json!({"tau": 0.01, "t_final": 0.02});
    let o = run(&["jko"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(d.path().join("out/trajectory.csv")).unwrap();
    let header = String::from_utf8_lossy(&first).lines().next().unwrap().to_string();
    assert_eq!(header, "k,t,energy,H,step_distance,mass_1,mass_2,second_moment");

    // the resolved config reproduces the run bit for bit
    let resolved: Value = serde_json::from_str(&fs::read_to_string(d.path().join("out/resolved_config.json")).unwrap()).unwrap();
    let d2 = tempfile::tempdir().unwrap();
    assert_eq!(run(&["jko"], &resolved, d2.path()).status.code(), Some(0));
    assert_eq!(fs::read(d2.path().join("out/trajectory.csv")).unwrap(), first);

    let mut diag = base();
    diag["diagnose"] = json!({"checks": ["energy_monotone", "telescoping_distance", "holder_bound", "entropy_sandwich"], "jko_run": d.path().join("out")});
    let d3 = tempfile::tempdir().unwrap();
    let o = run(&["diagnose"], &diag, d3.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let v = fs::read_to_string(d3.path().join("out/verdicts.csv")).unwrap();
    assert_eq!(v.lines().count(), 5);

    // absent inputs are inconclusive
    let mut diag = base();
    diag["diagnose"] = json!({"checks": ["constant_speed"]});
    assert_eq!(run(&["diagnose"], &diag, d3.path()).status.code(), Some(1));
}

#[test]
fn pde_oracles_and_compare() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["fd"] = json!({"t_end": 0.01});
    cfg["heat"] = json!({"t": 0.01});
    cfg["transport"] = json!({"alpha": 0.1, "rho": ["x"], "t_end": 0.01});
    cfg["jko"] = json!({"tau": 0.005, "t_final": 0.01});
    for cmd in ["fd-solve", "heat", "transport-solve"] {
        let o = run(&[cmd], &cfg, d.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(d.path().join("out/densities.csv").exists());
    }
    let o = run(&["compare", "--threads", "1"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rel: f64 = stdout(&o).trim().parse().unwrap();
    assert!(rel < 0.05);
    assert!(d.path().join("out/jko/trajectory.csv").exists() && d.path().join("out/fd/trajectory.csv").exists());
}
