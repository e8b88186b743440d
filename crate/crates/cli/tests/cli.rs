use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cupid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cupid")).args(args).output().expect("cupid runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, size: &str, seed: &str, households: &str) {
    let o = cupid(&["simulate", "--size", size, "--seed", seed, "--households", households, "--out", p(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"basis":{"kind":"polynomial","degree_x":1,"degree_y":1}}"#).unwrap();
    spec
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&cupid(&["--help"])), 0);
    assert_eq!(code(&cupid(&["solve", "--help"])), 0);
}

#[test]
fn unknown_flag_exits_one() {
    let o = cupid(&["solve", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));
}

#[test]
fn solve_reproduces_simulated_market() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let sol = tmp.path().join("sol");
    simulate(&sim, "5", "2", "1000");
    let o = cupid(&["solve", "--phi", p(&sim.join("phi.csv")), "--margins", p(&sim.join("margins.csv")), "--out", p(&sol)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(sol.join("matching.csv").exists());
    assert!(sol.join("utilities.csv").exists());
    let r = report(&sol);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["status"], "ok");
    assert!(r["details"]["max_margin_residual"].as_f64().unwrap() < 1e-6);

    // identification of the solved matching returns the simulated surplus
    let id = tmp.path().join("id");
    let o = cupid(&["identify", "--matching", p(&sol.join("matching.csv")), "--margins", p(&sim.join("margins.csv")), "--out", p(&id)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let phi_rows = |path: &Path| -> Vec<f64> {
        let mut rdr = csv::Reader::from_path(path).unwrap();
        rdr.records().map(|r| r.unwrap()[2].parse::<f64>().unwrap()).collect()
    };
    let a = phi_rows(&sim.join("phi.csv"));
    let b = phi_rows(&id.join("phi.csv"));
    assert_eq!(a.len(), 25);
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "identified surplus off by {gap}");
}

#[test]
fn non_convergence_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "4", "3", "100");
    let out = tmp.path().join("nc");
    let o = cupid(&[
        "solve", "--phi", p(&sim.join("phi.csv")), "--margins", p(&sim.join("margins.csv")),
        "--method", "ipfp", "--max-iter", "2", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert_eq!(report(&out)["status"], "no_convergence");
}

#[test]
fn dimension_mismatch_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let big = tmp.path().join("big");
    let small = tmp.path().join("small");
    simulate(&big, "4", "1", "500");
    simulate(&small, "3", "1", "500");
    let spec = write_spec(tmp.path());
    let out = tmp.path().join("est");
    let o = cupid(&[
        "estimate", "--data", p(&big.join("counts.csv")), "--margins", p(&small.join("margins.csv")),
        "--spec", p(&spec), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("men groups"), "{err}");
    let r = report(&out);
    assert_eq!(r["status"], "validation_error");
    assert!(r["error"].as_str().unwrap().contains("expected 3, found 4"));
}

#[test]
fn estimate_and_test_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, "4", "3", "20000");
    let spec = write_spec(tmp.path());
    for estimator in ["mm", "mle", "md"] {
        let out = tmp.path().join(format!("est_{estimator}"));
        let o = cupid(&[
            "estimate", "--data", p(&sim.join("counts.csv")), "--spec", p(&spec),
            "--estimator", estimator, "--boot", "10", "--seed", "4", "--out", p(&out),
        ]);
        assert_eq!(code(&o), 0, "{estimator}: {}", String::from_utf8_lossy(&o.stderr));
        let est: Value = serde_json::from_str(&std::fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
        assert_eq!(est["schema_version"], 1);
        assert_eq!(est["lambda"].as_array().unwrap().len(), 4);
        assert_eq!(est["bootstrap"]["se"].as_array().unwrap().len(), 4);
        assert!(out.join("comoments.csv").exists());
    }
    let out = tmp.path().join("test");
    let o = cupid(&["test", "--data", p(&sim.join("counts.csv")), "--spec", p(&spec), "--boot", "19", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t: Value = serde_json::from_str(&std::fs::read_to_string(out.join("test.json")).unwrap()).unwrap();
    let pv = t["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pv));
    assert!(t["statistic"].as_f64().unwrap() >= 0.0);
    let rows = csv::Reader::from_path(out.join("replicates.csv")).unwrap().records().count();
    assert_eq!(rows, 19);
}

#[test]
fn canonical_reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = cupid(&["--no-timings", "simulate", "--size", "4", "--seed", "9", "--households", "3000", "--out", p(&out)]);
        assert_eq!(code(&o), 0);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["report.json", "counts.csv", "matching.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert!(!std::fs::read_to_string(a.join("report.json")).unwrap().contains("wall_time"));
}

#[test]
fn bench_reports_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let o = cupid(&["bench", "--sizes", "8", "--seeds", "0,1", "--repeats", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("bench.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let agrees = headers.iter().position(|h| h == "agrees").unwrap();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| &r[agrees] == "true"));
    assert!(out.join("summary.csv").exists());
}

#[test]
fn missing_input_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = cupid(&["solve", "--phi", "/nonexistent/phi.csv", "--margins", "/nonexistent/m.csv", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert_eq!(report(&out)["exit_code"], 1);
}
