//! End-to-end runs of the `svyboot` binary.

mod common;

use common::*;
use serde_json::Value;

fn json(out: &std::process::Output) -> Value {
    assert!(out.status.success(), "stderr: {}", stderr(out));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["test", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_3_and_names_the_path() {
    let out = run(&["gof", "--input", "/nonexistent/data.csv", "--var", "k", "--expected", "0.5,0.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("/nonexistent/data.csv"), "{}", stderr(&out));
}

#[test]
fn malformed_values_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,x,w\n1,0.5,2\n0,abc,2\n").unwrap();
    let p = path.display().to_string();
    let out = run(&["fit", "--input", &p, "--model", "logistic", "--x", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));
}

#[test]
fn singular_design_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = collinear_csv(dir.path()).display().to_string();
    let out = run(&["fit", "--input", &p, "--model", "logistic", "--x", "x,dup"]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}

#[test]
fn bad_null_and_method_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = survey_csv(dir.path(), 1).display().to_string();
    let base = ["test", "--input", &p, "--model", "logistic", "--x", "age"];
    let out = run(&[&base[..], &["--null", "height=0"]].concat());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[&base[..], &["--null", "age=0", "--method", "nope"]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gof_two_level_example_gives_pearson_four() {
    let dir = tempfile::tempdir().unwrap();
    let p = k2_csv(dir.path()).display().to_string();
    let v = json(&run(&["gof", "--input", &p, "--var", "answer", "--expected", "0.5,0.5", "--method", "np,nlr"]));
    let pearson = num(&v["results"]["pearson"]);
    assert!((pearson - 4.0).abs() < 1e-9, "{pearson}");
    let np = &v["results"]["results"][0];
    assert_eq!(np["method"], "NP");
    assert!((num(&np["p_value"]) - 0.0455).abs() < 1e-4);
    assert!((num(&v["results"]["likelihood_ratio"]) - 4.027).abs() < 1e-3);
}

#[test]
fn survey_logistic_battery_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = survey_csv(dir.path(), 9).display().to_string();
    let v = json(&run(&[
        "test",
        "--input",
        &p,
        "--design",
        "stratified",
        "--strata",
        "stratum",
        "--model",
        "logistic",
        "--x",
        "age,income",
        "--null",
        "income=0",
        "--reps",
        "200",
        "--seed",
        "4",
    ]));
    assert_eq!(v["tool"], "svyboot");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["command"], "test");
    assert_eq!(v["master_seed"], 4);
    assert_eq!(v["config"]["data"]["design"], "stratified");
    assert_eq!(v["config"]["replicates"]["source"], "generated");
    assert_eq!(v["config"]["replicates"]["replicates"], 200);
    assert_eq!(v["config"]["null"][0]["name"], "income");
    let tests = v["results"]["tests"].as_array().unwrap();
    let names: Vec<&str> = tests.iter().map(|t| t["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["NLR", "NQS", "LS", "BLR", "BQS", "Wald"]);
    for t in tests {
        let p = num(&t["p_value"]);
        assert!((0.0..=1.0).contains(&p), "{t}");
        let used = t["replicates_used"].as_u64().unwrap();
        let dropped = t["replicates_dropped"].as_u64().unwrap();
        assert!((dropped as f64) < 0.05 * (used + dropped).max(1) as f64);
        assert!(t["reference"]["kind"].is_string());
        if t["method"] != "Wald" {
            assert!(num(&t["statistic"]) >= 0.0);
        }
    }
    let blr = &tests[3];
    assert_eq!(blr["replicates_used"], 200);
    let b = 200.0;
    let p = num(&blr["p_value"]);
    assert!(((p * (b + 1.0)).round() - p * (b + 1.0)).abs() < 1e-9, "empirical p on the 1/(B+1) grid");
    assert!(v["results"]["estimates"].as_array().unwrap().len() == 3);
}

#[test]
fn two_stage_design_runs_from_cluster_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = two_stage_csv(dir.path(), 2).display().to_string();
    let v = json(&run(&[
        "test",
        "--input",
        &p,
        "--design",
        "two-stage",
        "--cluster",
        "cluster",
        "--cluster-size",
        "size",
        "--population-clusters",
        "800",
        "--model",
        "logistic",
        "--x",
        "x",
        "--null",
        "x=0",
        "--method",
        "bqs,ls",
        "--reps",
        "100",
    ]));
    assert_eq!(v["config"]["data"]["population_clusters"], 800);
    let ls = &v["results"]["tests"][1];
    assert_eq!(ls["reference"]["kind"], "f");
    assert_eq!(num(&ls["reference"]["df2"]), 12.0 - 2.0);
}

#[test]
fn saved_weights_reproduce_generated_ones() {
    let dir = tempfile::tempdir().unwrap();
    let p = survey_csv(dir.path(), 3).display().to_string();
    let aug = dir.path().join("with_bw.csv").display().to_string();
    let design = ["--input", &p, "--design", "stratified", "--strata", "stratum", "--seed", "8"];
    let w = run(&[&["weights"][..], &design, &["--reps", "50", "--out", &aug]].concat());
    assert!(w.status.success(), "{}", stderr(&w));
    let summary: Value = serde_json::from_slice(&w.stdout).unwrap();
    assert_eq!(summary["config"]["replicates"], 50);
    let args = ["--model", "logistic", "--x", "age", "--null", "age=0", "--method", "blr,bqs"];
    let fresh = json(&run(&[&["test"][..], &design, &args, &["--reps", "50"]].concat()));
    let mut from_file = design.to_vec();
    from_file[1] = &aug;
    let saved = json(&run(&[&["test"][..], &from_file, &args].concat()));
    assert_eq!(saved["config"]["replicates"]["source"], "file");
    assert_eq!(fresh["results"]["tests"], saved["results"]["tests"]);
}

#[test]
fn formats_agree_on_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = k2_csv(dir.path()).display().to_string();
    let args = ["gof", "--input", &p, "--var", "answer", "--expected", "0.3,0.7", "--reps", "50"];
    let v = json(&run(&args));
    let text = stdout(&run(&[&args[..], &["--format", "text"]].concat()));
    let csv = stdout(&run(&[&args[..], &["--format", "csv"]].concat()));
    for r in v["results"]["results"].as_array().unwrap() {
        for key in ["statistic", "p_value"] {
            let s = r[key].to_string();
            assert!(text.contains(&s) && csv.contains(&s), "{key} {s} missing");
        }
    }
}

#[test]
fn thread_count_never_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in command_matrix(dir.path()) {
        deterministic(&cmd).unwrap();
    }
}
