use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use compsem::{data, scenario, Operator};

fn compsem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compsem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Reference model and an exact population sample written to a temp dir.
struct Scenario {
    dir: TempDir,
    model: PathBuf,
    data: PathBuf,
}

fn scenario_files() -> Scenario {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    let data = dir.path().join("data.csv");
    std::fs::write(&model, scenario::MODEL).unwrap();
    data::exact_population_sample(&scenario::observed_names(), &scenario::population_sigma(), 500)
        .unwrap()
        .write_csv(&data)
        .unwrap();
    Scenario { dir, model, data }
}

fn fit_json(s: &Scenario, extra: &[&str]) -> (String, Value) {
    let mut args = vec!["fit", "--model", path_str(&s.model), "--data", path_str(&s.data), "--output", "json"];
    args.extend_from_slice(extra);
    let out = compsem(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let value = serde_json::from_str(&text).unwrap();
    (text, value)
}

fn estimate(doc: &Value, lhs: &str, op: &str, rhs: &str) -> f64 {
    doc["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["lhs"] == lhs && p["op"] == op && p["rhs"] == rhs)
        .unwrap_or_else(|| panic!("no row {lhs} {op} {rhs}"))["estimate"]
        .as_f64()
        .unwrap()
}

#[test]
fn scenario_json_reports_df_and_population_values() {
    let s = scenario_files();
    let (_, doc) = fit_json(&s, &[]);
    assert_eq!(doc["df"], 52);
    assert_eq!(doc["k_free"], 39);
    assert_eq!(doc["converged"], true);
    assert_eq!(doc["identification"]["passed"], true);
    assert!(doc["fit"]["chisq"].as_f64().unwrap() < 1e-6);
    for &(lhs, op, rhs, value) in scenario::POPULATION {
        let est = estimate(&doc, lhs, op.symbol(), rhs);
        assert!((est - value).abs() < 1e-5, "{lhs} {op} {rhs}: {est} vs {value}");
    }
    // derived composite variances
    assert!((estimate(&doc, "eta3", "~~", "eta3") - 11.28).abs() < 1e-4);
    assert!((estimate(&doc, "eta4", "~~", "eta4") - 6.556).abs() < 1e-4);
}

#[test]
fn json_is_byte_identical_across_runs() {
    let s = scenario_files();
    let (a, _) = fit_json(&s, &[]);
    let (b, _) = fit_json(&s, &[]);
    assert_eq!(a, b);
}

#[test]
fn standardized_flag_leaves_estimates_unchanged() {
    let s = scenario_files();
    let (_, plain) = fit_json(&s, &[]);
    let (_, std) = fit_json(&s, &["--standardized"]);
    let (p, q) = (plain["parameters"].as_array().unwrap(), std["parameters"].as_array().unwrap());
    assert_eq!(p.len(), q.len());
    for (a, b) in p.iter().zip(q) {
        assert_eq!(a["estimate"], b["estimate"]);
        assert_eq!(a["se"], b["se"]);
        assert!(a.get("std").is_none());
        assert!(b.get("std").is_some());
    }
    assert_eq!(plain["fit"], std["fit"]);
    // η4 ~ η1: 0.6 √2 / √10.156
    let row = q
        .iter()
        .find(|r| r["lhs"] == "eta4" && r["op"] == Operator::RegressedOn.symbol() && r["rhs"] == "eta1")
        .unwrap();
    let expected = 0.6 * 2f64.sqrt() / 10.156f64.sqrt();
    assert!((row["std"].as_f64().unwrap() - expected).abs() < 1e-5);
}

#[test]
fn covariance_input_matches_raw_data() {
    let s = scenario_files();
    let sigma = scenario::population_sigma();
    let names = scenario::observed_names();
    let mut csv = format!(",{}\n", names.join(","));
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = (0..names.len()).map(|j| format!("{:e}", sigma[(i, j)])).collect();
        csv.push_str(&format!("{name},{}\n", row.join(",")));
    }
    let cov = s.dir.path().join("cov.csv");
    std::fs::write(&cov, csv).unwrap();
    let out = compsem(&[
        "fit", "--model", path_str(&s.model), "--cov", path_str(&cov), "--n", "500", "--output", "json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_cov: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (_, from_data) = fit_json(&s, &[]);
    assert_eq!(from_cov["df"], 52);
    for (a, b) in from_cov["parameters"].as_array().unwrap().iter().zip(from_data["parameters"].as_array().unwrap()) {
        let (x, y) = (a["estimate"].as_f64().unwrap(), b["estimate"].as_f64().unwrap());
        assert!((x - y).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn text_report_has_all_sections() {
    let s = scenario_files();
    let out = compsem(&[
        "fit", "--model", path_str(&s.model), "--data", path_str(&s.data), "--standardized",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["Degrees of freedom   52", "Fit statistics", "SRMR", "Parameters", "std", "eta4 ~ eta1"] {
        assert!(text.contains(needle), "missing `{needle}`:\n{text}");
    }
}

#[test]
fn missing_data_file_exits_with_io_code() {
    let s = scenario_files();
    let missing = s.dir.path().join("absent.csv");
    let out = compsem(&["fit", "--model", path_str(&s.model), "--data", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn isolated_composite_exits_with_identification_code() {
    let s = scenario_files();
    let model = s.dir.path().join("isolated.txt");
    std::fs::write(&model, "c <~ y7 + y8 + y9\n").unwrap();
    let out = compsem(&["fit", "--model", path_str(&model), "--data", path_str(&s.data)]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("composite-connectivity"), "{stderr}");
    assert!(out.stdout.is_empty());
}

#[test]
fn syntax_error_exits_with_parse_code() {
    let s = scenario_files();
    let model = s.dir.path().join("bad.txt");
    std::fs::write(&model, "f =~~ y1 + y2\n").unwrap();
    let out = compsem(&["fit", "--model", path_str(&model), "--data", path_str(&s.data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1:3"));
}

#[test]
fn non_convergence_exits_with_code_four() {
    let s = scenario_files();
    let out = compsem(&[
        "fit", "--model", path_str(&s.model), "--data", path_str(&s.data), "--max-iter", "2",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Converged            no"));
}

#[test]
fn simulate_writes_exact_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("sim.csv");
    let model = dir.path().join("m.txt");
    let out = compsem(&["simulate", "--out", path_str(&out_csv), "--n", "200", "--model-out", path_str(&model)]);
    assert!(out.status.success());
    let ds = data::read_csv(&out_csv, &Default::default()).unwrap();
    assert_eq!(ds.n(), 200);
    let m = data::sample_moments(&ds, compsem::Divisor::NMinusOne).unwrap();
    assert!((m.cov.clone() - scenario::population_sigma()).amax() < 1e-9);
    assert_eq!(std::fs::read_to_string(model).unwrap(), scenario::MODEL);
}
