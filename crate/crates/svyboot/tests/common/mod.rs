//! Synthetic CSV inputs and helpers for driving the `svyboot` binary.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use svyboot_core::rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svyboot"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "off").output().expect("spawn svyboot")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Stratified clustered health-survey style data: four strata with constant
/// within-stratum weights, a PSU id, a binary outcome, two covariates and two
/// categorical answers.
pub fn survey_csv(dir: &Path, seed: u64) -> PathBuf {
    let mut r = rng::stream(seed, 0xC1, 0);
    let mut body = String::from("y,age,income,w,stratum,psu,region,smoker\n");
    let weights = [40.0, 55.0, 70.0, 90.0];
    for (h, weight) in weights.iter().enumerate() {
        for psu in 0..6 {
            let effect: f64 = r.random_range(-0.4..0.4);
            for _ in 0..10 {
                let age: f64 = r.random_range(-1.5..1.5);
                let income: f64 = r.random_range(-1.0..1.0);
                let y = u8::from(r.random::<f64>() < expit(-0.2 + 0.7 * age + effect + 0.1 * h as f64));
                let region = ["north", "south", "east"][r.random_range(0..3)];
                let smoker = if r.random::<f64>() < 0.3 + 0.05 * h as f64 { "yes" } else { "no" };
                writeln!(body, "{y},{age:.4},{income:.4},{},{h},{},{region},{smoker}", weight, h * 10 + psu).unwrap();
            }
        }
    }
    write(dir, "survey.csv", &body)
}

/// Two-stage sample: 12 cluster draws of 6 units with cluster sizes `M_i`.
pub fn two_stage_csv(dir: &Path, seed: u64) -> PathBuf {
    let mut r = rng::stream(seed, 0xC2, 0);
    let mut body = String::from("y,x,w,cluster,size\n");
    let total = 40_000.0;
    for c in 0..12 {
        let m: u32 = r.random_range(20..80);
        let w = total / (12.0 * m as f64) * (m as f64 / 6.0);
        for _ in 0..6 {
            let x: f64 = r.random_range(-1.0..1.0);
            let y = u8::from(r.random::<f64>() < expit(0.3 * x));
            writeln!(body, "{y},{x:.4},{w},{c},{m}").unwrap();
        }
    }
    write(dir, "two_stage.csv", &body)
}

/// `n = 100` equal-weight records with 60 in level `a`: `p̂ = (0.6, 0.4)`.
pub fn k2_csv(dir: &Path) -> PathBuf {
    let mut body = String::from("answer,w\n");
    for i in 0..100 {
        body.push_str(if i < 60 { "a,20\n" } else { "b,20\n" });
    }
    write(dir, "k2.csv", &body)
}

/// Rank-deficient design: `dup` repeats `x`.
pub fn collinear_csv(dir: &Path) -> PathBuf {
    let mut body = String::from("y,x,dup,w\n");
    for i in 0..30 {
        let x = i as f64 / 10.0;
        writeln!(body, "{},{x},{x},2", i % 2).unwrap();
    }
    write(dir, "collinear.csv", &body)
}

/// One invocation per subcommand, sharing the inputs in `dir`.
pub fn command_matrix(dir: &Path) -> Vec<Vec<String>> {
    let survey = survey_csv(dir, 5).display().to_string();
    let k2 = k2_csv(dir).display().to_string();
    let strat = |extra: &[&str]| -> Vec<String> {
        let mut v = vec!["--input", &survey, "--design", "stratified", "--strata", "stratum", "--seed", "11"];
        v.extend_from_slice(extra);
        v.into_iter().map(String::from).collect()
    };
    let mut cmds = vec![
        [vec!["weights".to_string()], strat(&["--reps", "40"])].concat(),
        [vec!["fit".to_string()], strat(&["--model", "logistic", "--x", "age,income", "--reps", "60"])].concat(),
        [
            vec!["test".to_string()],
            strat(&["--model", "logistic", "--x", "age,income", "--null", "income=0", "--reps", "60"]),
        ]
        .concat(),
        [vec!["independence".to_string()], strat(&["--row", "region", "--col", "smoker", "--reps", "60"])].concat(),
    ];
    cmds.push(
        ["gof", "--input", &k2, "--var", "answer", "--expected", "0.5,0.5", "--reps", "60", "--seed", "3"]
            .map(String::from)
            .to_vec(),
    );
    cmds.push(
        ["simulate", "--scenario", "table1", "--mc", "10", "--reps", "50", "--seed", "7"].map(String::from).to_vec(),
    );
    cmds
}

/// Runs `args` at `--threads 1` (twice) and `--threads 8`; `Ok` when all
/// three outputs are byte-identical for each format.
pub fn deterministic(args: &[String]) -> Result<(), String> {
    for format in ["json", "text", "csv"] {
        let go = |threads: &str| {
            let mut v: Vec<&str> = args.iter().map(String::as_str).collect();
            v.extend(["--threads", threads, "--format", format]);
            let out = run(&v);
            if !out.status.success() {
                return Err(format!("{} failed: {}", args.join(" "), stderr(&out)));
            }
            Ok(out.stdout)
        };
        let a = go("1")?;
        if a != go("1")? || a != go("8")? {
            return Err(format!("{} --format {format}: output differs", args[0]));
        }
    }
    Ok(())
}
