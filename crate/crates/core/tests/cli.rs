//! End-to-end runs of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

use frechet_dose::config::RunConfig;
use frechet_dose::stats::quantile;

mod common;

fn tool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frechet-dose"))
        .args(args)
        .output()
        .unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.lines().last().unwrap()).unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[estimator]\nbandwith = 0.2\n").unwrap();
    let out = tool(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["kind"], "config");
    assert!(rec["message"].as_str().unwrap().contains("bandwith"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_values_exit_with_config_error() {
    let out = tool(&["infer", "--alpha", "1.5", "--dump-config"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tool(&["simulate", "--scenario", "7", "--dump-config"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "unit,age_lo,deaths,treatment,x1\na,0,0,1,0\na,5,0,1,0\n",
    )
    .unwrap();
    let out = tool(&[
        "estimate",
        "--input",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["kind"], "data");
    let out = tool(&[
        "ingest-check",
        dir.path().join("missing.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dump_config_round_trips() {
    let out = tool(&[
        "infer",
        "--seed",
        "9",
        "--estimator",
        "dr",
        "--bandwidth",
        "0.4",
        "--dump-config",
    ]);
    assert!(out.status.success());
    let c = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.mode.name(), "infer");
    assert_eq!(c.estimator.kind.name(), "dr");
}

#[test]
fn ingest_check_summarizes_life_tables() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t.csv");
    common::write_life_tables(&tables, 4, 1.0);
    let embedded = dir.path().join("e.csv");
    let out = tool(&[
        "ingest-check",
        tables.to_str().unwrap(),
        "--write-embedded",
        embedded.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["units"], 50);
    assert_eq!(s["covariates"], 3);
    assert_eq!(s["grid_len"], 51);
    assert_eq!(s["groups"].as_array().unwrap().len(), 4);
    let out = tool(&[
        "ingest-check",
        embedded.to_str().unwrap(),
        "--format",
        "embedded",
    ]);
    assert!(out.status.success());
}

#[test]
fn life_table_estimate_reports_groups_and_three_level_effects() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("t.csv");
    common::write_life_tables(&tables, 5, 1.0);
    let out_dir = dir.path().join("o");
    let out = tool(&[
        "estimate",
        "--input",
        tables.to_str().unwrap(),
        "--estimator",
        "dr",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc = read_json(&out_dir.join("estimate.json"));
    let groups = doc["groups"].as_array().unwrap();
    let names: Vec<&str> = groups
        .iter()
        .map(|g| g["group"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["all", "north", "south", "east", "west"]);

    let data = frechet_dose::ingest::ingest_life_tables(&tables, &Default::default()).unwrap();
    let levels: Vec<f64> = groups[0]["contrast_levels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let expected: Vec<f64> = [0.05, 0.5, 0.95]
        .iter()
        .map(|&p| quantile(data.treatment(), p))
        .collect();
    assert_eq!(levels, expected);
    assert_eq!(groups[0]["effects"].as_array().unwrap().len(), 3);

    let effects = std::fs::read_to_string(out_dir.join("effects.csv")).unwrap();
    assert_eq!(effects.lines().count(), 1 + 5 * 3 * 51);
    let plot = std::fs::read_to_string(out_dir.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 5 * 20 * 51);
}

#[test]
fn manifest_carries_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = tool(&[
        "estimate",
        "--n",
        "300",
        "--seed",
        "21",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let m = read_json(&out_dir.join("manifest.json"));
    assert_eq!(m["seed"], 21);
    let c = RunConfig::from_toml(m["config"].as_str().unwrap()).unwrap();
    assert_eq!(c.dgp.n, 300);
    assert_eq!(c.dgp.seed, 21);
    let listed: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    for f in &listed {
        assert!(out_dir.join(f).exists());
    }
    assert!(listed.contains(&"estimate.json"));
}

#[test]
fn infer_writes_band_and_hulc_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = tool(&[
        "infer",
        "--n",
        "800",
        "--grid-len",
        "11",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let band = read_json(&out_dir.join("band.json"));
    let b = &band[0]["band"];
    let lower = b["lower"][0]["values"].as_array().unwrap();
    let upper = b["upper"][0]["values"].as_array().unwrap();
    assert_eq!(lower.len(), 11);
    assert!(lower
        .iter()
        .zip(upper)
        .all(|(l, u)| l.as_f64() <= u.as_f64()));
    let hulc = read_json(&out_dir.join("hulc.json"));
    let intervals = hulc[0]["intervals"].as_array().unwrap();
    assert_eq!(intervals.len(), 3);
    assert_eq!(intervals[0]["b"], 6);
}

#[test]
fn simulate_with_table_defaults_summarizes_every_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = tool(&["simulate", "--out", out_dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut reader = csv::Reader::from_path(out_dir.join("mc_summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    for name in ["or", "ipw", "dr", "cf"] {
        let mise = rows
            .iter()
            .find(|r| &r[0] == name && &r[1] == "mise")
            .unwrap();
        assert_eq!(&mise[4], "100");
        assert!(mise[2].parse::<f64>().unwrap() > 0.0);
    }
    let report = read_json(&out_dir.join("mc_report.json"));
    assert_eq!(report["report"]["replications"], 100);
}
