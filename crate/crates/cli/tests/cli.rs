use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn repeller(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repeller"))
        .args(args)
        .env_remove("REPELLER_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_passes_on_the_worked_example() {
    let out = repeller(&["verify", "--variant", "full", "--q", "0.5", "--b", "0.375", "--a", "0.7"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert!(reports.iter().all(|r| r["status"] != "fail"));
    assert!(reports.iter().any(|r| r["name"] == "gluing" && r["status"] == "pass"));
}

#[test]
fn verify_fails_on_a_broken_parameter_set() {
    // β pushes 2α + 2β past 1; the check runs on unvalidated params
    let out = repeller(&["verify", "--variant", "physical", "--beta", "0.3", "--checks", "alpha_beta_budget"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn physical_with_large_q_is_rejected() {
    let out = repeller(&["build", "--variant", "physical", "--q", "0.5", "--b", "0.375"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("physical variant requires q < 1/2"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = repeller(&["graph", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = repeller(&["graph", "--branch", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn branch_graph_has_requested_rows_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("k3.csv");
    let out = repeller(&["graph", "--branch", "3", "--pieces", "--samples", "1000", "-o", path(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["x", "value", "derivative", "branch_index", "piece_label", "x_offset", "value_offset"]
    );
    let rows: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1000);
    let labels: std::collections::BTreeSet<_> = rows.iter().map(|r| r[4].to_owned()).collect();
    assert_eq!(labels.len(), 3, "{labels:?}");
    let xs: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(xs.windows(2).all(|w| w[0] <= w[1]));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("k3.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "graph");
    assert_eq!(meta["params"]["q"], 0.5);
    assert!(meta["timestamp"].is_null());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let d = dir.path().join(sub);
        let out = repeller(&["orbit", "-n", "20000", "--seed", "7", "--out-dir", path(&d)]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let mut files: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|f| (f.file_name().unwrap().to_owned(), fs::read(f).unwrap())).collect::<Vec<_>>()
    };
    let first = run("a");
    assert!(first.len() >= 6, "{} files", first.len());
    assert_eq!(first, run("b"));
}

#[test]
fn seed_flag_beats_environment() {
    let x0 = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_repeller"));
        cmd.args(["orbit", "-n", "10"]).args(args).env_remove("REPELLER_SEED");
        if let Some(s) = env {
            cmd.env("REPELLER_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_owned()
    };
    let from_env = x0(&[], Some("11"));
    assert_eq!(from_env, x0(&["--seed", "11"], None));
    assert_ne!(from_env, x0(&[], None));
    assert_eq!(x0(&["--seed", "11"], Some("12")), from_env);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    fs::write(&cfg, r#"{"variant":"full","q":0.5,"b":0.375,"a":0.8}"#).unwrap();
    let build = |extra: &[&str]| {
        let mut args = vec!["build", "--config", path(&cfg)];
        args.extend_from_slice(extra);
        let out = repeller(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    assert_eq!(build(&[])["params"]["a"], 0.8);
    let over = build(&["--a", "0.6"]);
    assert_eq!(over["params"]["a"], 0.6);
    assert_eq!(over["params"]["b"], 0.375);
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    fs::write(&cfg, "{ not json").unwrap();
    let out = repeller(&["build", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_lists_its_checks() {
    let out = repeller(&["verify", "--list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["gluing", "c1_at_q", "epsilon_constraints"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn graph_piece_down_to_one_is_the_return_map() {
    let rows = |extra: &[&str]| {
        let mut args = vec!["graph", "--branch", "4", "--samples", "50"];
        args.extend_from_slice(extra);
        let out = repeller(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        let mut r = csv::Reader::from_reader(out.stdout.as_slice());
        r.records().map(|rec| rec.unwrap()[1].parse::<f64>().unwrap()).collect::<Vec<_>>()
    };
    let phi = rows(&["--map", "phi", "--to", "1"]);
    let big_f = rows(&["--map", "F"]);
    assert_eq!(phi.len(), 50);
    for (u, v) in phi.iter().zip(&big_f) {
        assert!((u - v).abs() <= 1e-10, "{u} vs {v}");
    }
    let out = repeller(&["graph", "--map", "phi", "--branch", "2", "--to", "3"]);
    assert_eq!(out.status.code(), Some(2));
}
