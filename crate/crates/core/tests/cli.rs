//! The command-line tool end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn headturn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headturn")).args(args).output().expect("spawn headturn")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn evaluate_candidate_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let out = headturn(&["simulate", "--scene", s(&fixture("novel_interest.toml")), "--seed", "3", "--out", s(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = sim.join("walker.csv");
    let table = dir.path().join("eval.csv");
    let out = headturn(&["evaluate", "--reference", s(&trace), "--candidate", s(&trace), "--out", s(&table)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&table).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn ablate_single_toggle_adds_labelled_row() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("ablation.csv");
    let svg = dir.path().join("ablation.svg");
    let out = headturn(&[
        "ablate",
        "--scene",
        s(&fixture("hazard_safety.toml")),
        "--toggle",
        "no-safety",
        "--runs",
        "2",
        "--svg",
        s(&svg),
        "--out",
        s(&table),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("scenario,method,condition,mean,ci95,n,seed"));
    assert!(text.contains("full model"));
    let row = text.lines().find(|l| l.contains("w/o Safety driver")).expect("ablated row");
    let mean: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(mean > 0.0);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn unknown_toggle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = headturn(&[
        "ablate",
        "--scene",
        s(&fixture("hazard_safety.toml")),
        "--toggle",
        "no-such-thing",
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["error"].as_str().unwrap().contains("no-such-thing"));
}

#[test]
fn schema_violation_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("hazard_safety.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replacen("version = 1", "version = 7", 1)).unwrap();
    let out = headturn(&["validate-scene", "--scene", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_line(&out);
    assert_eq!(err["kind"], "schema");
    assert_eq!(err["field"], "version");

    std::fs::write(&bad, text.replacen("class = \"building\"", "class = 4", 1)).unwrap();
    let out = headturn(&["validate-scene", "--scene", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!error_line(&out)["kind"].as_str().unwrap().is_empty());
}

#[test]
fn validate_scene_accepts_fixtures() {
    for name in ["bus_mdc.toml", "injected_hazard_apc.toml", "flow_social.toml"] {
        let out = headturn(&["validate-scene", "--scene", s(&fixture(name))]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains(": ok ("));
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let out = headturn(&["validate-scene", "--scene", "/nonexistent/scene.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["kind"], "io");
}
