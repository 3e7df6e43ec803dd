//! End-to-end tests of the command-line interface: exit codes, report
//! contents, schema conformance, and byte-level reproducibility.

mod schema_check;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use schema_check::validate_against_schema;
use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_samglr")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("samglr-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Zero the only timing field so reports from identical runs compare equal.
fn null_wall_ms(mut v: Value) -> Value {
    if let Some(m) = v.get_mut("manifest") {
        m["wall_ms"] = Value::from(0);
    }
    v
}

#[test]
fn fit_toy_report() {
    let dir = tempdir("fit-toy");
    let out = dir.join("report.json");
    let res = run(&[
        "fit",
        "--data",
        data("toy.csv").to_str().unwrap(),
        "--schema",
        data("toy_schema.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out);
    assert!((report["alpha_hat"].as_f64().unwrap() - 2.75).abs() < 1e-9);
    assert!((report["rss"].as_f64().unwrap() - 2.5).abs() < 1e-9);
    assert_eq!(report["components"][0]["variable"], "x");
    validate_against_schema(&report, &schema_dir().join("fit_report.schema.json"));
}

#[test]
fn fit_constant_response() {
    let dir = tempdir("fit-const");
    let csv = dir.join("const.csv");
    std::fs::write(&csv, "x,y\n0,3\n1,3\n0,3\n1,3\n").unwrap();
    let out = dir.join("report.json");
    let res = run(&[
        "fit",
        "--data",
        csv.to_str().unwrap(),
        "--schema",
        data("toy_schema.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let report = read_json(&out);
    assert!(report["rss"].as_f64().unwrap() < 1e-18);
    let estimates = report["components"][0]["estimates"].as_array().unwrap();
    assert!(estimates.iter().all(|e| e.as_f64().unwrap().abs() < 1e-12));
}

#[test]
fn fit_missing_column_exits_2() {
    let dir = tempdir("fit-badcol");
    let csv = dir.join("short.csv");
    std::fs::write(&csv, "y\n1\n2\n").unwrap();
    let res = run(&[
        "fit",
        "--data",
        csv.to_str().unwrap(),
        "--schema",
        data("toy_schema.json").to_str().unwrap(),
        "--out",
        dir.join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("'x'"));
}

#[test]
fn fit_semiparametric_with_partial_effects() {
    let dir = tempdir("fit-mixed");
    let out = dir.join("report.json");
    let effects = dir.join("effects");
    let res = run(&[
        "fit",
        "--data",
        data("mixed.csv").to_str().unwrap(),
        "--schema",
        data("mixed_schema.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--partial-effects",
        effects.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out);
    validate_against_schema(&report, &schema_dir().join("fit_report.schema.json"));
    for name in ["cut.csv", "x2.csv", "z.csv"] {
        assert!(effects.join(name).exists(), "missing {name}");
    }
    let z_csv = std::fs::read_to_string(effects.join("z.csv")).unwrap();
    assert!(z_csv.starts_with("z,partial_residual,fitted"));
    assert_eq!(z_csv.lines().count(), 31); // header + n rows
}

#[test]
fn test_toy_hypothesis() {
    let dir = tempdir("test-toy");
    let out = dir.join("report.json");
    let res = run(&[
        "test",
        "--data",
        data("toy.csv").to_str().unwrap(),
        "--schema",
        data("toy_schema.json").to_str().unwrap(),
        "--hypothesis",
        data("toy_hypothesis.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out);
    assert!((report["lambda_n"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!((report["p_value"].as_f64().unwrap() - 0.001565).abs() < 1e-6);
    assert_eq!(report["mode"], "exact");
    assert_eq!(report["df_indep"], 1);
    validate_against_schema(&report, &schema_dir().join("test_report.schema.json"));

    // The indep mode only changes the headline; both p-values are present.
    let out2 = dir.join("report2.json");
    let res = run(&[
        "test",
        "--data",
        data("toy.csv").to_str().unwrap(),
        "--schema",
        data("toy_schema.json").to_str().unwrap(),
        "--hypothesis",
        data("toy_hypothesis.json").to_str().unwrap(),
        "--mode",
        "indep",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let report2 = read_json(&out2);
    assert_eq!(report2["mode"], "indep");
    assert_eq!(
        report2["p_value_headline"].as_f64().unwrap(),
        report2["p_value_indep"].as_f64().unwrap()
    );
}

#[test]
fn test_goodness_of_fit_hypothesis() {
    let dir = tempdir("test-gof");
    let out = dir.join("report.json");
    let res = run(&[
        "test",
        "--data",
        data("mixed.csv").to_str().unwrap(),
        "--schema",
        data("mixed_schema.json").to_str().unwrap(),
        "--hypothesis",
        data("mixed_hypothesis.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out);
    // Block sizes: poly(1) on k=3 gives 1, zero on k=4 gives 4 - 1 retained.
    assert_eq!(report["df_indep"], 4);
    validate_against_schema(&report, &schema_dir().join("test_report.schema.json"));
}

#[test]
fn test_continuous_predictor_exits_2() {
    let dir = tempdir("test-badhyp");
    let res = run(&[
        "test",
        "--data",
        data("mixed.csv").to_str().unwrap(),
        "--schema",
        data("mixed_schema.json").to_str().unwrap(),
        "--hypothesis",
        data("bad_hypothesis.json").to_str().unwrap(),
        "--out",
        dir.join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("predictor"), "stderr: {err}");
}

#[test]
fn test_reports_are_reproducible() {
    // Same inputs, same output path, two runs: the reports differ at most
    // in the manifest's wall time.
    let dir = tempdir("test-repro");
    let out = dir.join("report.json");
    let mut captured = Vec::new();
    for _ in 0..2 {
        let res = run(&[
            "test",
            "--data",
            data("toy.csv").to_str().unwrap(),
            "--schema",
            data("toy_schema.json").to_str().unwrap(),
            "--hypothesis",
            data("toy_hypothesis.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
        captured.push(null_wall_ms(read_json(&out)));
    }
    assert_eq!(
        serde_json::to_vec(&captured[0]).unwrap(),
        serde_json::to_vec(&captured[1]).unwrap()
    );
}

#[test]
fn simulate_produces_study_outputs() {
    let dir = tempdir("simulate");
    let res = run(&[
        "simulate",
        "--config",
        data("small_study.json").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let records = std::fs::read_to_string(dir.join("replications.csv")).unwrap();
    assert_eq!(records.lines().count(), 7); // header + 6 replications
    assert!(dir.join("null_density.csv").exists());
    let summary = read_json(&dir.join("summary.json"));
    assert_eq!(summary["kind"], "null");
    assert_eq!(summary["replications_completed"], 6);
    validate_against_schema(&summary, &schema_dir().join("study_summary.schema.json"));
}

#[test]
fn power_study_outputs_and_trend() {
    let dir = tempdir("power");
    let res = run(&[
        "power",
        "--config",
        data("small_study.json").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let power_csv = std::fs::read_to_string(dir.join("power.csv")).unwrap();
    let rows: Vec<&str> = power_csv.lines().collect();
    assert_eq!(rows.len(), 3); // header + 2 beta values
    let powers: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    // Trend: the strong-signal end of the grid dominates the null end.
    assert!(powers[1] >= powers[0]);
    let summary = read_json(&dir.join("summary.json"));
    assert_eq!(summary["kind"], "power");
    validate_against_schema(&summary, &schema_dir().join("study_summary.schema.json"));
}

#[test]
fn study_outputs_are_byte_identical_across_threads() {
    let dir1 = tempdir("det-t1");
    let dir2 = tempdir("det-t4");
    for (dir, threads) in [(&dir1, "1"), (&dir2, "4")] {
        let res = run(&[
            "simulate",
            "--config",
            data("small_study.json").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            "99",
            "--threads",
            threads,
        ]);
        assert!(res.status.success());
    }
    let csv1 = std::fs::read(dir1.join("replications.csv")).unwrap();
    let csv2 = std::fs::read(dir2.join("replications.csv")).unwrap();
    assert_eq!(csv1, csv2);
    // The manifests legitimately differ (they record the actual output
    // paths); everything outside them must be byte-identical.
    let mut s1 = read_json(&dir1.join("summary.json"));
    let mut s2 = read_json(&dir2.join("summary.json"));
    s1["manifest"] = serde_json::Value::Null;
    s2["manifest"] = serde_json::Value::Null;
    assert_eq!(
        serde_json::to_vec(&s1).unwrap(),
        serde_json::to_vec(&s2).unwrap()
    );
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempdir("badcfg");
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, r#"{"n": 100, "replications": 0}"#).unwrap();
    let res = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn dist_command_values() {
    let res = run(&["dist", "--weights", "1", "--pvalue", "3.8415"]);
    assert!(res.status.success());
    let out = String::from_utf8_lossy(&res.stdout);
    let v: f64 = out.trim().parse().unwrap();
    assert!((v - 0.05).abs() < 1e-4);

    let res = run(&["dist", "--weights", "1", "1", "--quantile", "0.95"]);
    let out = String::from_utf8_lossy(&res.stdout);
    let v: f64 = out.trim().parse().unwrap();
    assert!((v - 5.9915).abs() < 1e-3);

    let res = run(&["dist", "--weights", "1", "--shift", "1.0", "--cdf", "1.0"]);
    let out = String::from_utf8_lossy(&res.stdout);
    let v: f64 = out.trim().parse().unwrap();
    assert_eq!(v, 0.0);

    // Missing weights is a usage error (clap exits 2).
    let res = run(&["dist", "--pvalue", "1.0"]);
    assert_eq!(res.status.code(), Some(2));
}
