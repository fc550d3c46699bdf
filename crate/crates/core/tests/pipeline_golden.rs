mod common;

use std::fs;

use espeni_core::merge::{read_espeni_csv, Variant};
use espeni_core::pipeline::{run_pipeline_on, Stage};

use common::{fixture_config as config_into, fixture_dir, fixture_today as today};

#[test]
fn outputs_match_golden_files() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_pipeline_on(&config_into(out.path()), today()).unwrap();
    assert_eq!(summary.rows, 142);
    assert_eq!(summary.recreated_rows, 1);
    assert_eq!(summary.skipped_flags, 1);
    assert_eq!(summary.elexon_flags, 5);
    assert_eq!(summary.ng_flags, 2);
    for name in ["espeni_raw.csv", "espeni.csv"] {
        let got = fs::read_to_string(out.path().join(name)).unwrap();
        let want = fs::read_to_string(fixture_dir().join("golden").join(name)).unwrap();
        assert!(got == want, "{name} differs from golden:\n{}", first_difference(&got, &want));
        let sidecar = fs::read_to_string(out.path().join(format!("{name}.sha256"))).unwrap();
        assert!(sidecar.ends_with(&format!("  {name}\n")));
        assert_eq!(sidecar.split_whitespace().next().unwrap().len(), 64);
    }
    assert!(out.path().join("masterdatetime_iso8601.csv").exists());
}

fn first_difference(got: &str, want: &str) -> String {
    for (i, (g, w)) in got.lines().zip(want.lines()).enumerate() {
        if g != w {
            return format!("line {}\n got: {g}\nwant: {w}", i + 1);
        }
    }
    format!("line counts {} vs {}", got.lines().count(), want.lines().count())
}

#[test]
fn rerun_is_byte_identical() {
    let out = tempfile::tempdir().unwrap();
    let config = config_into(out.path());
    run_pipeline_on(&config, today()).unwrap();
    let first: Vec<Vec<u8>> = ["espeni_raw.csv", "espeni.csv", "espeni.csv.sha256", "error_summary.csv"]
        .iter()
        .map(|n| fs::read(out.path().join(n)).unwrap())
        .collect();
    // The second run reads the calendar written by the first.
    run_pipeline_on(&config, today()).unwrap();
    let second: Vec<Vec<u8>> = ["espeni_raw.csv", "espeni.csv", "espeni.csv.sha256", "error_summary.csv"]
        .iter()
        .map(|n| fs::read(out.path().join(n)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn espeni_column_is_the_row_sum() {
    for (name, variant) in [("espeni_raw.csv", Variant::Raw), ("espeni.csv", Variant::Clean)] {
        let bytes = fs::read(fixture_dir().join("golden").join(name)).unwrap();
        let table = read_espeni_csv(bytes.as_slice(), variant).unwrap();
        for r in &table.records {
            let recomputed: i64 = r.power.iter().map(|v| v.unwrap_or(0)).sum();
            assert_eq!(r.espeni_mw, Some(recomputed), "{}", r.key);
        }
    }
}

#[test]
fn failed_run_leaves_no_outputs() {
    let out = tempfile::tempdir().unwrap();
    let mut config = config_into(out.path());
    let empty = tempfile::tempdir().unwrap();
    config.ng_dir = empty.path().to_path_buf();
    let err = run_pipeline_on(&config, today()).unwrap_err();
    assert_eq!(err.stage, Stage::IngestNg);
    assert_eq!(err.exit_code(), 2);
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 0);

    config.ng_dir = fixture_dir().join("ng");
    config.elexon_dir = empty.path().to_path_buf();
    let err = run_pipeline_on(&config, today()).unwrap_err();
    assert_eq!(err.stage, Stage::IngestElexon);
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn write_failure_leaves_no_partial_files() {
    let out = tempfile::tempdir().unwrap();
    // A non-empty directory squatting on the final path makes the rename fail.
    fs::create_dir_all(out.path().join("espeni.csv/blocker")).unwrap();
    let err = run_pipeline_on(&config_into(out.path()), today()).unwrap_err();
    assert_eq!(err.stage, Stage::Write);
    for entry in fs::read_dir(out.path()).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().into_owned();
        assert!(!name.ends_with(".partial"), "{name} left behind");
    }
}
