use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hjblab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjblab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(cmd: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = out.with_extension("json");
    fs::write(&cfg, config).unwrap();
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    hjblab(&args)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn solve_hjb_writes_field_residual_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hjb");
    let o = run("solve-hjb", r#"{"schema": 1, "problem": {"benchmark": "heat"}, "grid": {"dx": 0.1}}"#, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["field.csv", "field.json", "residual.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = report(&out);
    assert!((r["value_at_x0"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(r["problem"], "heat");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // gate refusal
    let o = run(
        "solve-fbsde",
        r#"{"schema": 1, "problem": {"benchmark": "burgers"}, "override_gate": false}"#,
        &dir.path().join("gate"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    // config errors
    let o = run("solve-hjb", r#"{"schema": 1, "problem": {"benchmark": "heat"}, "gird": {}}"#, &dir.path().join("typo"), &[]);
    assert_eq!(o.status.code(), Some(4));
    let o = run("solve-hjb", r#"{"schema": 2, "problem": {"benchmark": "heat"}}"#, &dir.path().join("schema"), &[]);
    assert_eq!(o.status.code(), Some(4));
    let o = run(
        "solve-hjb",
        r#"{"schema": 1, "problem": {"name": "p", "dims": {"n": 1, "d": 1, "k": 1}, "horizon": 1.0,
            "b": ["x1 +"], "sigma": ["1"], "g": "0", "phi": "0", "lipschitz": {"l1": 1, "l2": 0, "l3": 0}}}"#,
        &dir.path().join("parse"),
        &[],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset 4"));
    // solver error: too few steps for the explicit scheme
    let o = run(
        "solve-hjb",
        r#"{"schema": 1, "problem": {"benchmark": "heat"}, "grid": {"dx": 0.1, "steps": 10}}"#,
        &dir.path().join("cfl"),
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CFL"));
}

#[test]
fn check_reports_and_flags_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = run("check", r#"{"schema": 1, "problem": {"benchmark": "burgers"}, "override_gate": false}"#, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(r["gate_passed"], false);
    assert_eq!(r["assumptions"]["smallness_ok"], false);
    let out = dir.path().join("h");
    let o = run("check", r#"{"schema": 1, "problem": {"benchmark": "heat"}}"#, &out, &[]);
    assert!(o.status.success());
    assert_eq!(report(&out)["gate_passed"], true);
}

#[test]
fn fbsde_and_dpp_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let o = run(
        "solve-fbsde",
        r#"{"schema": 1, "problem": {"benchmark": "burgers"}, "fbsde": {"paths": 2000, "steps": 10, "x0": [0.5], "trajectories": 7}}"#,
        &out,
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7 * 11);
    assert!(csv.starts_with("t,path_id,x1,y,z1\n"));
    let r = report(&out);
    assert!(r["picard_iters"].as_u64().unwrap() > 2);

    let out = dir.path().join("d");
    let o = run(
        "value-dpp",
        r#"{"schema": 1, "problem": {"benchmark": "drift_control"}, "grid": {"dx": 0.25}, "dpp": {"paths": 2000, "slabs": 4}}"#,
        &out,
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let head = fs::read_to_string(out.join("field.csv")).unwrap();
    assert!(head.starts_with("t,x1,W,argmin_u1\n"));
    // the controlled value lies below the uncontrolled one (x0² + T = 1)
    assert!(report(&out)["value_at_x0"].as_f64().unwrap() < 1.0);
}

#[test]
fn seed_override_changes_monte_carlo_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema": 1, "problem": {"benchmark": "heat"}, "fbsde": {"paths": 500, "steps": 5}}"#;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run("solve-fbsde", cfg, &a, &[]).status.success());
    assert!(run("solve-fbsde", cfg, &b, &["--seed-override", "9"]).status.success());
    assert!(run("solve-fbsde", cfg, &c, &["--threads", "3"]).status.success());
    let read = |p: &Path| fs::read(p.join("trajectories.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
    assert_eq!(report(&b)["seed"], 9);
}

#[test]
fn verify_frozen_sigma_with_candidate_files() {
    let dir = tempfile::tempdir().unwrap();
    let hjb = dir.path().join("hjb");
    let base = r#""problem": {"benchmark": "heat"}, "grid": {"dx": 0.1}"#;
    assert!(run("solve-hjb", &format!("{{\"schema\": 1, {base}}}"), &hjb, &[]).status.success());
    let csv = hjb.join("field.csv");
    let json = hjb.join("field.json");
    let verify = |shift: f64, name: &str| {
        let out = dir.path().join(name);
        let cfg = format!(
            r#"{{"schema": 1, {base}, "verify": {{"check": "frozen-sigma", "shift": {shift},
                "candidate": {{"csv": {:?}, "json": {:?}}},
                "uniqueness": {{"slabs": 5, "dpp": {{"paths": 5000}}}}}}}}"#,
            csv.to_str().unwrap(),
            json.to_str().unwrap()
        );
        let o = run("verify", &cfg, &out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("w_dpp.csv").exists());
        report(&out)["result"]["verdict"].as_str().unwrap().to_string()
    };
    assert_eq!(verify(0.0, "own"), "equal");
    assert_eq!(verify(0.5, "shifted"), "inconsistent");
}

#[test]
fn verify_pr_um_and_ito() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = run(
        "verify",
        r#"{"schema": 1, "problem": {"benchmark": "heat"}, "grid": {"dx": 0.1},
            "verify": {"check": "pr-um", "slabs": [2, 4], "pipeline": {"paths": 1000, "select_paths": 200, "steps": 8}}}"#,
        &out,
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(&out)["result"]["runs"].as_array().unwrap().len(), 2);

    let out = dir.path().join("i");
    let o = run(
        "verify",
        r#"{"schema": 1, "problem": {"benchmark": "heat"}, "grid": {"dx": 0.1, "half": 4.0},
            "verify": {"check": "ito", "ito": {"paths": 200, "steps": 5}}}"#,
        &out,
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g = &report(&out)["result"]["gaps"];
    assert!(g["pi1_min"].as_f64().unwrap().abs() < 0.1, "{g}");
    assert!(g["terminal_gap"].as_f64().unwrap() < 0.1, "{g}");
}

#[test]
fn bench_artifacts_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let eight = dir.path().join("eight");
    for (out, t) in [(&one, "1"), (&eight, "8")] {
        let o = hjblab(&["bench", "--out", out.to_str().unwrap(), "--threads", t, "--criteria", "3,12"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
        let table = String::from_utf8_lossy(&o.stdout).to_string();
        assert!(table.contains("2/2 criteria passed"), "{table}");
    }
    let mut names: Vec<_> = fs::read_dir(one.join("artifacts"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy().ends_with(".csv")));
    for n in names {
        assert_eq!(
            fs::read(one.join("artifacts").join(&n)).unwrap(),
            fs::read(eight.join("artifacts").join(&n)).unwrap(),
            "{n:?}"
        );
    }
}
