use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn critfield(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critfield"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn assert_valid(out: &Path, file: &str, schema: &str) {
    let inst: Value = serde_json::from_str(&fs::read_to_string(out.join(file)).unwrap()).unwrap();
    let sch: Value = serde_json::from_str(&fs::read_to_string(schema_dir().join(schema)).unwrap()).unwrap();
    let v = jsonschema::validator_for(&sch).unwrap();
    let errs: Vec<String> = v.iter_errors(&inst).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errs.is_empty(), "{file} against {schema}: {errs:?}");
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn analyze_exit_codes_and_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let o = critfield(dir.path(), &["analyze", "--scenario", "ellipse:2,1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_valid(dir.path(), "critical_points.json", "critical_points.schema.json");
    assert_valid(dir.path(), "conditions.json", "conditions.schema.json");
    assert_valid(dir.path(), "run.json", "run.schema.json");

    let o = critfield(dir.path(), &["analyze", "--scenario", "paper_cubic", "--no-mu-scan"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("failed: P4"));
    assert_valid(dir.path(), "conditions.json", "conditions.schema.json");

    let o = critfield(dir.path(), &["analyze", "--scenario", "sphere:1", "--no-mu-scan"]);
    assert_eq!(code(&o), 2);
    assert_valid(dir.path(), "critical_points.json", "critical_points.schema.json");
    assert_valid(dir.path(), "conditions.json", "conditions.schema.json");
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&critfield(dir.path(), &["analyze", "--scenario", "klein_bottle"])), 1);
    assert_eq!(code(&critfield(dir.path(), &["analyze", "--scenario", "ellipse:2"])), 1);
    assert_eq!(code(&critfield(dir.path(), &["sample-study", "--eps="])), 1);
    assert_eq!(code(&critfield(dir.path(), &["sample-study", "--eps", "0.1,-0.05"])), 1);
    assert_eq!(code(&critfield(dir.path(), &["sample-study", "--eps", "0.05,0.1"])), 1);
    assert_eq!(code(&critfield(dir.path(), &["offsets", "--grid", "0"])), 1);
    assert_eq!(code(&critfield(dir.path(), &["offsets", "--scenario", "sphere:1"])), 1);
    assert_eq!(code(&critfield(dir.path(), &["frobnicate"])), 1);
}

#[test]
fn counterexample_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = critfield(dir.path(), &["counterexample"]);
    assert_eq!(code(&o), 0);
    assert_valid(dir.path(), "counterexample.json", "counterexample.schema.json");
    let csv = fs::read_to_string(dir.path().join("counterexample.csv")).unwrap();
    assert!(csv.lines().count() >= 8);
    let svg = fs::read_to_string(dir.path().join("counterexample.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn perturb_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = critfield(dir.path(), &["perturb", "--scenario", "ellipse:2,1", "--amp", "0,0.01"]);
    assert_eq!(code(&o), 0);
    assert_valid(dir.path(), "perturbation.json", "perturbation.schema.json");
    let o = critfield(dir.path(), &["perturb", "--scenario", "paper_cubic", "--amp", "0.1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("vanished"));
    assert_valid(dir.path(), "perturbation.json", "perturbation.schema.json");
}

#[test]
fn offsets_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = critfield(dir.path(), &["offsets", "--scenario", "circle:1", "--grid", "0.02"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_valid(dir.path(), "offsets.json", "offsets.schema.json");
    assert_valid(dir.path(), "run.json", "run.schema.json");
}

#[test]
fn sample_study_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "7", "sample-study", "--eps", "0.2,0.1"];
    assert_eq!(code(&critfield(a.path(), &args)), 0);
    assert_eq!(code(&critfield(b.path(), &args)), 0);
    assert_valid(a.path(), "sampling.json", "sampling.schema.json");
    for f in ["sampling.json", "sampling.csv", "sampling.svg", "run.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let run: Value = serde_json::from_str(&fs::read_to_string(a.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 7);
    assert_eq!(run["command"], "sample-study");
}

#[test]
fn scenario_file_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = critfield(dir.path(), &["analyze", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(code(&o), 1);
}
