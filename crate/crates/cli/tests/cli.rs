use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use betta::io::EstimateColumns;
use betta::read_estimates;
use betta::sim::read_report_rows;
use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn betta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betta")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = betta(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn out_dir(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn assert_same_files(actual: &Path, expected: &Path, files: &[&str]) {
    for f in files {
        let a = fs::read_to_string(actual.join(f)).unwrap();
        let e = fs::read_to_string(expected.join(f)).unwrap();
        assert_eq!(a, e, "{f} differs from its golden copy");
    }
}

const FIT_FILES: [&str; 4] = ["fit.json", "coefficients.csv", "diagnostics.csv", "summary.txt"];

#[test]
fn fit_workflow_matches_golden_output() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "fit");
    ok(&["fit", "--input", data("gradient.csv").to_str().unwrap(), "--out", &out]);
    assert_same_files(Path::new(&out), &data("expected/gradient"), &FIT_FILES);
    let manifest = json(&Path::new(&out).join("manifest.json"));
    assert_eq!(manifest["subcommand"], "fit");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn fit_random_matches_golden_output() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "random");
    let input = data("treatment.csv");
    ok(&["fit-random", "--input", input.to_str().unwrap(), "--covariates", "treatment", "--group", "patient", "--out", &out]);
    assert_same_files(Path::new(&out), &data("expected/treatment"), &FIT_FILES);
    let fit = json(&Path::new(&out).join("fit.json"));
    assert!(fit["sigma_u_sq"].as_f64().unwrap() >= 0.0);
    assert!(fit["sigma_g_sq"].as_f64().unwrap() >= 0.0);
    assert_eq!(fit["group_levels"].as_array().unwrap().len(), 3);
}

#[test]
fn bootstrap_matches_golden_output() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "bs");
    ok(&["bootstrap-se", "--input", data("table.csv").to_str().unwrap(), "--seed", "7", "--out", &out]);
    assert_same_files(Path::new(&out), &data("expected/bootstrap"), &["bootstrap.json"]);
    let s = json(&Path::new(&out).join("bootstrap.json"));
    let understated = s["bootstrap_sd"].as_f64().unwrap() > s["original_std_error"].as_f64().unwrap();
    assert_eq!(s["understated"].as_bool().unwrap(), understated);
}

#[test]
fn identical_rows_give_boundary_fit() {
    let tmp = TempDir::new().unwrap();
    let input = write(&tmp, "same.csv", "id,estimate,std_error\na,100,1\nb,100,1\nc,100,1\n");
    let out = out_dir(&tmp, "o");
    ok(&["fit", "--input", &input, "--out", &out]);
    let fit = json(&Path::new(&out).join("fit.json"));
    assert_eq!(fit["sigma_u_sq"].as_f64().unwrap(), 0.0);
    assert!(fit["homogeneity_test"]["statistic"].as_f64().unwrap() < 1e-20);
    assert_eq!(fit["homogeneity_test"]["p_value"].as_f64().unwrap(), 1.0);
    assert!(fit["global_test"].is_null());
}

#[test]
fn missing_covariate_is_named() {
    let tmp = TempDir::new().unwrap();
    let out = betta(&[
        "fit",
        "--input",
        data("gradient.csv").to_str().unwrap(),
        "--covariates",
        "ph,altitude",
        "--out",
        &out_dir(&tmp, "o"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("altitude"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = TempDir::new().unwrap();
    let bad = write(&tmp, "bad.csv", "id,estimate,std_error\na,1,oops\nb,2,1\n");
    assert_eq!(betta(&["fit", "--input", &bad, "--out", &out_dir(&tmp, "a")]).status.code(), Some(3));
    let rank = write(&tmp, "rank.csv", "id,estimate,std_error,a,b\n1,10,1,1,2\n2,20,1,2,4\n3,25,1,3,6\n4,31,1,4,8\n");
    assert_eq!(betta(&["fit", "--input", &rank, "--out", &out_dir(&tmp, "b")]).status.code(), Some(4));
    assert_eq!(betta(&["fit", "--bogus"]).status.code(), Some(2));
}

#[test]
fn single_group_reduces_to_fixed_fit() {
    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(data("gradient.csv")).unwrap();
    let mut lines = text.lines();
    let mut grouped = format!("{},group\n", lines.next().unwrap());
    for l in lines {
        grouped.push_str(&format!("{l},only\n"));
    }
    let input = write(&tmp, "one.csv", &grouped);
    let fixed = out_dir(&tmp, "fixed");
    let random = out_dir(&tmp, "random");
    ok(&["fit", "--input", data("gradient.csv").to_str().unwrap(), "--out", &fixed]);
    let out = ok(&["fit-random", "--input", &input, "--out", &random]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("single level"));
    let a = json(&Path::new(&fixed).join("fit.json"));
    let b = json(&Path::new(&random).join("fit.json"));
    assert_eq!(b["reduced_to_fixed"], true);
    assert_eq!(a["terms"], b["terms"]);
    assert_eq!(a["homogeneity_test"], b["homogeneity_test"]);
}

#[test]
fn missing_group_values_are_dropped() {
    let tmp = TempDir::new().unwrap();
    let mut text = fs::read_to_string(data("treatment.csv")).unwrap();
    text.push_str("p4_t1,1400,40,pre,NA\n");
    let input = write(&tmp, "t.csv", &text);
    let out = out_dir(&tmp, "o");
    ok(&["fit-random", "--input", &input, "--covariates", "treatment", "--group", "patient", "--out", &out]);
    let fit = json(&Path::new(&out).join("fit.json"));
    assert_eq!(fit["n_dropped"], 1);
    assert_eq!(fit["n_observations"], 12);
}

#[test]
fn estimate_reports_chao1_and_ratio() {
    let out = ok(&["estimate", "--input", data("table.csv").to_str().unwrap(), "--id", "plot7"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("plot7,120,"));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("c = 100") && stderr.contains("f1/f2 = 2.0"));

    // the row appends onto an estimate table
    let table = format!("id,estimate,std_error\nother,130,9\n{stdout}");
    let parsed = read_estimates(table.as_bytes(), &EstimateColumns::default()).unwrap();
    assert_eq!(parsed.dataset.m(), 2);
}

#[test]
fn malformed_estimator_reply_is_reported() {
    let out = betta(&["estimate", "--input", data("table.csv").to_str().unwrap(), "--estimator", "cmd:echo nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("protocol"));
}

#[test]
fn bootstrap_needs_fifty_resamples() {
    let tmp = TempDir::new().unwrap();
    let out = betta(&[
        "bootstrap-se",
        "--input",
        data("table.csv").to_str().unwrap(),
        "--resamples",
        "49",
        "--out",
        &out_dir(&tmp, "o"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

fn simulate(tmp: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = out_dir(tmp, name);
    let table = data("table.csv");
    let mut args = vec!["simulate"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--input", table.to_str().unwrap(), "--sizes", "200,400,800", "--out", &out]);
    ok(&args);
    PathBuf::from(out)
}

#[test]
fn simulate_is_reproducible_and_parses_back() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(&tmp, "a", &["size", "--datasets", "60", "--seed", "9"]);
    let b = simulate(&tmp, "b", &["size", "--datasets", "60", "--seed", "9"]);
    let ra = fs::read(a.join("report.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.csv")).unwrap());
    let rows = read_report_rows(ra.as_slice()).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(json(&a.join("manifest.json"))["seed"], 9);
}

#[test]
fn zero_percent_power_matches_size() {
    let tmp = TempDir::new().unwrap();
    let size = simulate(&tmp, "s", &["size", "--datasets", "150", "--seed", "4"]);
    let power = simulate(&tmp, "p", &["power", "--percent", "0", "--datasets", "150", "--seed", "4"]);
    let rs = read_report_rows(fs::read(size.join("report.csv")).unwrap().as_slice()).unwrap();
    let rp = read_report_rows(fs::read(power.join("report.csv")).unwrap().as_slice()).unwrap();
    for (s, p) in rs.iter().zip(&rp) {
        assert!((s.rate - p.rate).abs() <= 3.0 * s.mc_se.max(p.mc_se).max(1e-12));
    }
}

#[test]
fn homogeneity_rejects_covariates() {
    let tmp = TempDir::new().unwrap();
    let table = data("table.csv");
    for extra in [["--covariates", "x"], ["--grid", "1,2,3,4,5,6,7,8,9,10"]] {
        let mut args = vec!["simulate", "homogeneity", "--input", table.to_str().unwrap()];
        args.extend_from_slice(&extra);
        let out_path = out_dir(&tmp, "h");
        args.extend_from_slice(&["--out", &out_path]);
        let out = betta(&args);
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("no covariates"));
    }
}

#[test]
fn dump_lists_every_dataset() {
    let tmp = TempDir::new().unwrap();
    let dir = simulate(&tmp, "d", &["homogeneity", "--percent", "20", "--datasets", "25", "--dump"]);
    let text = fs::read_to_string(dir.join("outcomes.csv")).unwrap();
    assert_eq!(text.lines().count(), 26);
}
