//! End-to-end checks of the `cellgmm` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn cellgmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellgmm")).args(args).env_remove("CELLGMM_SEED").output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_column(file: &Path, col: usize) -> Vec<String> {
    fs::read_to_string(file).unwrap().lines().skip(1).map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

fn generate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["generate", "--scenario", "1", "--seed", "7", "--out", path(dir)];
    args.extend_from_slice(extra);
    let out = cellgmm(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_recovers_clean_scenario_labels() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    let fit = tmp.path().join("fit");
    generate(&gen, &[]);
    let out = cellgmm(&["fit", path(&gen.join("data.csv")), "--g", "2", "--restarts", "2", "--out", path(&fit)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth = read_column(&gen.join("labels.csv"), 0);
    let assigned = read_column(&fit.join("assignments.csv"), 1);
    let agree = truth.iter().zip(&assigned).filter(|(a, b)| a == b).count();
    let mr = agree.min(truth.len() - agree) as f64 / truth.len() as f64;
    assert!(mr <= 0.02, "misclassification rate {mr}");
    for name in ["params.json", "mask.csv", "imputed.csv", "residuals.csv", "assignments.csv", "manifest.json"] {
        assert!(fit.join(name).exists(), "{name} missing");
    }
}

#[test]
fn manifest_checksums_match_outputs() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    let fit = tmp.path().join("fit");
    generate(&gen, &[]);
    assert!(cellgmm(&["fit", path(&gen.join("data.csv")), "--g", "2", "--restarts", "1", "--out", path(&fit)]).status.success());
    for dir in [&gen, &fit] {
        let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
        let outputs = manifest["outputs"].as_array().unwrap();
        assert!(!outputs.is_empty());
        for a in outputs {
            let bytes = fs::read(a["path"].as_str().unwrap()).unwrap();
            assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(bytes)));
        }
    }
}

#[test]
fn h_frac_validation() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("small.csv");
    let mut text = String::from("a,b\n");
    for i in 0..10 {
        text.push_str(&format!("{},{}\n", i as f64 * 0.37 % 1.3, (i * i) as f64 * 0.11 % 2.1));
    }
    fs::write(&csv, text).unwrap();
    let ok = cellgmm(&["fit", path(&csv), "--g", "1", "--h-frac", "0.5", "--restarts", "1", "--allow-nonconverged", "--out", path(&tmp.path().join("a"))]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = cellgmm(&["fit", path(&csv), "--g", "1", "--h-frac", "1.01", "--out", path(&tmp.path().join("b"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_json(&bad)["error"], "InvalidConfig");
}

#[test]
fn argument_and_input_errors_exit_2_with_json() {
    let tmp = TempDir::new().unwrap();
    let out = cellgmm(&["fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "InvalidArguments");
    let out = cellgmm(&["fit", "/nonexistent/x.csv", "--g", "2", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "Io");
    let out = cellgmm(&["simulate", "--scenario", "9", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "UnknownScenario");
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"name":"x","n":50,"p":2,"g":2,"weights":[0.5,0.6],"separation":"well_separated"}"#).unwrap();
    let out = cellgmm(&["simulate", "--spec", path(&spec), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "InvalidConfig");
    let out = cellgmm(&["simulate", "--scenario", "1", "--outliers", "wild", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nonconvergence_exits_3_unless_allowed() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    generate(&gen, &["--contamination", "5"]);
    let data = gen.join("data.csv");
    let out = cellgmm(&["fit", path(&data), "--g", "2", "--max-iter", "2", "--restarts", "1", "--out", path(&tmp.path().join("a"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "NoConvergence");
    assert!(tmp.path().join("a/params.json").exists());
    let out = cellgmm(&[
        "fit", path(&data), "--g", "2", "--max-iter", "2", "--restarts", "1", "--allow-nonconverged", "--out", path(&tmp.path().join("b")),
    ]);
    assert!(out.status.success());
}

#[test]
fn residuals_are_empty_exactly_at_missing_cells() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    let fit = tmp.path().join("fit");
    generate(&gen, &["--contamination", "5", "--missing-rate", "0.05"]);
    let out = cellgmm(&["fit", path(&gen.join("data.csv")), "--g", "2", "--restarts", "1", "--allow-nonconverged", "--out", path(&fit)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let missing = fs::read_to_string(gen.join("missing.csv")).unwrap();
    let residuals = fs::read_to_string(fit.join("residuals.csv")).unwrap();
    let mut n_missing = 0;
    for (m, r) in missing.lines().skip(1).zip(residuals.lines().skip(1)) {
        for (mf, rf) in m.split(',').zip(r.split(',')) {
            assert_eq!(mf == "1", rf.is_empty());
            n_missing += usize::from(mf == "1");
        }
    }
    assert_eq!(n_missing, 50);
}

#[test]
fn residuals_command_flags_planted_outlier_first() {
    let tmp = TempDir::new().unwrap();
    let gen = tmp.path().join("gen");
    let fit = tmp.path().join("fit");
    generate(&gen, &[]);
    let data = gen.join("data.csv");
    assert!(cellgmm(&["fit", path(&data), "--g", "2", "--restarts", "1", "--out", path(&fit)]).status.success());

    // Clean data: roughly the nominal 1% of cells exceed the threshold.
    let res = tmp.path().join("res");
    let out = cellgmm(&["residuals", path(&data), "--params", path(&fit.join("params.json")), "--out", path(&res)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let flagged = fs::read_to_string(res.join("flags.csv")).unwrap().lines().count() - 1;
    assert!(flagged <= 40, "{flagged} of 1000 cells flagged");

    // A gross error in row 10, column 3 must top the list.
    let text = fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[10].split(',').map(String::from).collect();
    cells[2] = "60".into();
    lines[10] = cells.join(",");
    let planted = tmp.path().join("planted.csv");
    fs::write(&planted, lines.join("\n") + "\n").unwrap();
    let res2 = tmp.path().join("res2");
    let out = cellgmm(&["residuals", path(&planted), "--params", path(&fit.join("params.json")), "--out", path(&res2)]);
    assert!(out.status.success());
    let first = fs::read_to_string(res2.join("flags.csv")).unwrap().lines().nth(1).unwrap().to_string();
    assert!(first.starts_with("10,3,x3,"), "{first}");
}

#[test]
fn residuals_schema_mismatch_exits_2() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("d.csv");
    fs::write(&csv, "a\n1\n2\n3\n").unwrap();
    let params = tmp.path().join("p.json");
    fs::write(&params, r#"{"g":1,"weights":[1.0],"means":[[0.0,0.0]],"covariances":[[[1.0,0.0],[0.0,1.0]]]}"#).unwrap();
    let out = cellgmm(&["residuals", path(&csv), "--params", path(&params), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "SchemaMismatch");
}

#[test]
fn seed_environment_variable_overrides_flag() {
    let tmp = TempDir::new().unwrap();
    let run = |dir: &str, seed: &str, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cellgmm"));
        cmd.args(["generate", "--scenario", "1", "--seed", seed, "--out", path(&tmp.path().join(dir))]);
        match env {
            Some(v) => cmd.env("CELLGMM_SEED", v),
            None => cmd.env_remove("CELLGMM_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read(tmp.path().join(dir).join("data.csv")).unwrap()
    };
    let a = run("a", "1", None);
    let b = run("b", "2", Some("1"));
    let c = run("c", "2", None);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn simulate_is_deterministic_across_runs_and_jobs() {
    let tmp = TempDir::new().unwrap();
    let run = |dir: &str, jobs: &str| {
        let out = cellgmm(&[
            "simulate", "--scenario", "1", "--contamination", "0,5", "--methods", "pen0,penb", "--replicates", "1", "--restarts", "1", "--seed", "5",
            "--jobs", jobs, "--out", path(&tmp.path().join(dir)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(tmp.path().join(dir).join("results.csv")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "4"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 5);
    // pen0 on clean data flags exactly the forced quarter of the cells.
    let pen0_clean = text.lines().find(|l| l.starts_with("1,0,none,pen0,")).unwrap();
    assert_eq!(pen0_clean.split(',').nth(8).unwrap().parse::<f64>().unwrap(), 25.0);
}
