use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sigle_core::experiment::{first_selection_problem, ExperimentConfig};
use sigle_core::glm::sigmoid;

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigle"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
lambda = 0.6
replicates = 40

[design]
n = 8
p = 3
seed = 4

[sampler]
kind = "exact"

[power]
signal = "localized"
nu = [0.0, 2.0]
"#;

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_setting1_certifies_kkt() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve"], &repo_config("setting1.toml"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    assert!(cert["kkt_residual"].as_f64().unwrap() <= 1e-6);
    let s = cert["support"].as_array().unwrap().len();
    assert!(s <= 10);
}

#[test]
fn solve_huge_lambda_selects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve"], &repo_config("null_huge_lambda.toml"), dir.path());
    assert!(out.status.success());
    let cert = json(&dir.path().join("certificate.json"));
    assert!(cert["support"].as_array().unwrap().is_empty());
    assert!(cert["theta_hat"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
}

#[test]
fn solve_small_fixture_support_matches_kkt_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL);
    let out = run(&["solve"], &cfg_path, dir.path());
    assert!(out.status.success());
    let cert = json(&dir.path().join("certificate.json"));
    let theta: Vec<f64> = cert["theta_hat"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let cfg: ExperimentConfig = toml::from_str(SMALL).unwrap();
    let prob = first_selection_problem(&cfg).unwrap();
    // dual vector recomputed from scratch
    let (n, d) = prob.x.shape();
    let mut support = Vec::new();
    for k in 0..d {
        let mut g = 0.0;
        for i in 0..n {
            let eta: f64 = (0..d).map(|j| prob.x[(i, j)] * theta[j]).sum();
            g += prob.x[(i, k)] * (prob.y[i] - sigmoid(eta));
        }
        let s = g / prob.lambda;
        assert!(s.abs() <= 1.0 + 1e-5);
        if s.abs() >= 1.0 - 1e-4 {
            support.push(k as u64);
        }
    }
    let got: Vec<u64> = cert["support"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(got, support);
}

#[test]
fn enumerate_huge_lambda_returns_whole_cube() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["enumerate"], &repo_config("null_huge_lambda.toml"), dir.path());
    assert!(out.status.success());
    let ev = json(&dir.path().join("event.json"));
    assert_eq!(ev["codes"].as_array().unwrap().len(), 1 << 10);
}

#[test]
fn test_output_is_deterministic_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["test", "--seed", "9"], &cfg, &a).status.success());
    assert!(run(&["test", "--seed", "9", "--threads", "2"], &cfg, &b).status.success());
    let ca = fs::read(a.join("pvalues.csv")).unwrap();
    let cb = fs::read(b.join("pvalues.csv")).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert_eq!(text.lines().next(), Some("method,replicate,p_value"));
    assert_eq!(text.lines().count(), 1 + 40 * 5);
}

#[test]
fn power_output_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = run(&["power"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("power.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("nu,method,power"));
    assert_eq!(text.lines().count(), 1 + 2 * 5);
}

#[test]
fn sample_writes_trace_and_hamming() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
lambda = 0.6
replicates = 1
[design]
n = 8
p = 3
seed = 4
[sampler]
kind = "sei-slr"
[sampler.anneal]
steps = 2000
k0 = 1.0
"#,
    );
    let out = Command::new(env!("CARGO_BIN_EXE_sigle"))
        .args(["sample", "--stride", "10", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 200);
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for key in ["t", "state", "energy", "accepted", "log_weight"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let h = json(&dir.path().join("hamming.json"));
    let k = h["states"].as_array().unwrap().len();
    assert_eq!(h["normalized_distance"].as_array().unwrap().len(), k);
}

#[test]
fn cr_writes_region() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["cr"], &repo_config("small_exact.toml"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("region.json"));
    assert!(r["radius"].as_f64().unwrap() > 0.0);
    assert!(r["fit_residual"].as_f64().unwrap() < 1e-2);
}

#[test]
fn nonconvergence_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
lambda = 0.6
replicates = 1
[design]
n = 30
p = 5
seed = 1
[sampler]
kind = "rejection"
[solver]
max_iter = 1
polish = false
kkt_tolerance = 1e-14
"#,
    );
    let out = run(&["solve"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_replicates_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("replicates = 40", "replicates = 0"));
    let out = run(&["test"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
}
