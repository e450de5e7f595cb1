mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use dgp_cli::config::{GroupCol, RunConfig, Task};
use dgp_cli::ingest::write_table;
use dgp_cli::pipeline::{self, EXIT_FAILED, EXIT_FLAGGED};
use dgp_cli::RunStatus;
use serde_json::Value;

use common::{erp_table, quick_config};

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn write_erp(dir: &Path, subjects: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join("erp.csv");
    fs::write(&path, write_table(&erp_table(subjects, seed).table)).unwrap();
    path
}

#[test]
fn multisubject_22_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_erp(dir.path(), 22, 3);
    let out = dir.path().join("run");
    let config = RunConfig {
        task: Task::Multisubject,
        data: Some(data),
        interval: Some([50.0, 250.0]),
        prior: "beta:3,3".into(),
        out: Some(out.clone()),
        group_col: GroupCol::Group,
        ..quick_config()
    };
    let outcome = pipeline::run(&config).unwrap();
    assert_ne!(outcome.status, RunStatus::Failed);

    let hpd = read_json(&out.join("hpd.json"));
    assert_eq!(hpd["subjects"].as_array().unwrap().len(), 22);
    let gmm = read_json(&out.join("gmm.json"));
    assert_eq!(gmm["subjects"].as_array().unwrap().len(), 22);
    let groups = gmm["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups.iter().map(|g| g["subjects"].as_u64().unwrap()).sum::<u64>(), 22);
    for g in groups {
        assert_eq!(g["means"].as_array().unwrap().len(), 2);
        assert_eq!(g["sds"].as_array().unwrap().len(), 2);
    }

    let meta = read_json(&out.join("meta.json"));
    assert_eq!(meta["pools"].as_array().unwrap().len(), 2);
    assert_eq!(meta["subjects"].as_array().unwrap().len(), 22);
    // Subjects in one pool share θ*.
    let pools = meta["pools"].as_array().unwrap();
    for s in meta["subjects"].as_array().unwrap() {
        let pool = pools.iter().find(|p| p["name"] == s["pool"]).unwrap();
        assert_eq!(pool["theta_star"], s["theta_star"]);
    }

    let draws = fs::read_to_string(out.join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 1 + 22 * config.sampler.final_draws);
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 22 * config.grid_len);
}

#[test]
fn rerun_is_byte_identical_and_summarize_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_erp(dir.path(), 2, 11);
    let out = dir.path().join("run");
    let config = RunConfig {
        task: Task::Fit,
        data: Some(data),
        interval: Some([50.0, 250.0]),
        prior: "beta:3,3".into(),
        out: Some(out.clone()),
        seed: 42,
        ..quick_config()
    };
    pipeline::run(&config).unwrap();
    let first = snapshot(&out);
    for f in ["meta.json", "draws.csv", "hpd.json", "gmm.json", "curve.csv"] {
        assert!(first.contains_key(f), "{f} missing");
    }
    pipeline::run(&config).unwrap();
    assert_eq!(snapshot(&out), first);

    fs::remove_file(out.join("hpd.json")).unwrap();
    fs::remove_file(out.join("gmm.json")).unwrap();
    pipeline::summarize(&out).unwrap();
    assert_eq!(snapshot(&out), first);
}

#[test]
fn multiple_and_oracle_modes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_erp(dir.path(), 1, 5);
    for (mode, coords) in [("multiple:50,135,250", 2), ("oracle:100,170", 0)] {
        let out = dir.path().join(mode.replace([':', ','], "_"));
        let config = RunConfig {
            data: Some(data.clone()),
            mode: mode.into(),
            out: Some(out.clone()),
            ..quick_config()
        };
        pipeline::run(&config).unwrap();
        let hpd = read_json(&out.join("hpd.json"));
        assert_eq!(hpd["subjects"][0]["coordinates"].as_array().unwrap().len(), coords);
        assert_eq!(out.join("gmm.json").exists(), coords > 0);
    }
}

#[test]
fn failure_after_validation_still_writes_meta() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_erp(dir.path(), 1, 5);
    let out = dir.path().join("run");
    // Two constraint points far closer than any admissible length scale.
    let config = RunConfig {
        data: Some(data),
        mode: "oracle:100,100.01".into(),
        out: Some(out.clone()),
        ..quick_config()
    };
    assert!(pipeline::run(&config).is_err());
    let meta = read_json(&out.join("meta.json"));
    assert_eq!(meta["status"], "failed");
    assert!(meta["error"].as_str().unwrap().contains("closer"));
}

#[test]
fn invalid_config_fails_before_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = RunConfig {
        data: Some(dir.path().join("missing.csv")),
        out: Some(out.clone()),
        ..quick_config()
    };
    assert!(pipeline::run(&config).is_err());
    assert!(!out.exists());
}

#[test]
fn interval_outside_data_range_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_erp(dir.path(), 1, 5);
    let config = RunConfig {
        data: Some(data),
        interval: Some([0.0, 250.0]),
        out: Some(dir.path().join("run")),
        ..quick_config()
    };
    let e = pipeline::run(&config).unwrap_err();
    assert!(format!("{e:#}").contains("data range"), "{e:#}");
}

fn dgp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dgp"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_erp(dir.path(), 1, 8);

    let status = dgp()
        .args(["fit", "--data", "/nonexistent.csv", "--out"])
        .arg(dir.path().join("bad"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_FAILED));

    // One MCEM iteration cannot meet the tolerance, so the run is flagged.
    let out = dir.path().join("flagged");
    let status = dgp()
        .args(["fit", "--data"])
        .arg(&data)
        .args(["--max-iter", "1", "--draws-per-iter", "200", "--subsample", "20", "--final-draws", "200", "--grid-len", "10", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_FLAGGED));
    let meta = read_json(&out.join("meta.json"));
    assert_eq!(meta["status"], "flagged");
    assert_eq!(meta["subjects"][0]["converged"], false);

    let status = dgp().arg("summarize").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn simstudy_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let config = RunConfig {
        task: Task::Simstudy,
        replicates: 2,
        methods: vec!["gpr".into(), "oracle".into()],
        out: Some(out.clone()),
        ..quick_config()
    };
    pipeline::run(&config).unwrap();
    let first = snapshot(&out);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["methods"].as_array().unwrap().len(), 2);
    let curve = fs::read_to_string(out.join("rmse_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2 * config.grid_len);
    let reps = fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 2 * 2);
    pipeline::run(&config).unwrap();
    assert_eq!(snapshot(&out), first);
}

#[test]
fn synthetic_erp_has_exactly_two_stationary_points() {
    // Corners of the generator's latency ranges.
    for t1 in [96.0, 104.0] {
        for t2 in [166.0, 174.0] {
            let slope = |x: f64| common::erp_slope(x, t1, t2, 4.0);
            let signs: Vec<f64> = (0..=20_000).map(|i| slope(50.0 + 0.01 * i as f64).signum()).collect();
            assert_eq!(signs.windows(2).filter(|w| w[0] != w[1]).count(), 2, "({t1}, {t2})");
            assert!(slope(t1).abs() < 1e-12 && slope(t2).abs() < 1e-12);
            for x in [60.0, 120.0, 240.0] {
                let fd = (common::erp_curve(x + 1e-4, t1, t2, 4.0) - common::erp_curve(x - 1e-4, t1, t2, 4.0)) / 2e-4;
                assert!((slope(x) - fd).abs() < 1e-7);
            }
        }
    }
}
