// Licensed under the Apache-2.0 license

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gecko_core::firmware::ExperimentRecord;
use gecko_core::registers::register_map_markdown;
use serde_json::Value;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn gecko(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gecko"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    repo(&format!("scenarios/{name}.toml"))
        .display()
        .to_string()
}

#[test]
fn nominal_run_perches_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = gecko(dir.path(), &["run", &scenario("nominal")]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("nominal.csv")).unwrap();
    assert!(csv.starts_with("tick,time_s,x,y,heading,"));
    let result: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("nominal.result.json")).unwrap())
            .unwrap();
    assert_eq!(result["perched"], true);
    assert!(result["contact_speed_mm_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn misalignment_override_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = gecko(
        dir.path(),
        &[
            "run",
            &scenario("nominal"),
            "--set",
            "approach.misalignment_deg=20",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let result: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("nominal.result.json")).unwrap())
            .unwrap();
    assert_eq!(result["outcome"]["reason"], "excess-misalignment");
}

#[test]
fn missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = gecko(dir.path(), &["run", "does/not/exist.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_field_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = gecko(dir.path(), &["run", "--set", "controller.kp=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("controller.kp"));
    let out = gecko(
        dir.path(),
        &["run", "--set", "approach.speed_mm_s=\"fast\""],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("approach.speed_mm_s"));
}

#[test]
fn pull_test_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = gecko(dir.path(), &["pull-test", &scenario("pull_bench")]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("pull_test.json")).unwrap()).unwrap();
    let mean = report["mean_per_pair_n"].as_f64().unwrap();
    assert!((10.4..=11.2).contains(&mean), "{mean}");
    assert!(report["max_deviation_pct"].as_f64().unwrap() <= 10.0);

    let out = gecko(
        dir.path(),
        &[
            "pull-test",
            "-n",
            "1",
            "--set",
            "surface.quality=1",
            "--set",
            "adhesion.pull_noise=0",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("pull_test.json")).unwrap()).unwrap();
    assert!((report["trials"][0]["per_pair_n"].as_f64().unwrap() - 20.0).abs() < 1e-9);

    let out = gecko(dir.path(), &["pull-test", "-n", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn monte_carlo_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = gecko(d.path(), &["--seed", "11", "monte-carlo", "-n", "20"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("monte_carlo.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let csv = std::fs::read_to_string(a.path().join("monte_carlo.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1);
}

#[test]
fn drip_writes_log_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = gecko(dir.path(), &["drip", &scenario("nominal"), "-e", "5"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bytes = std::fs::read(dir.path().join("exp_00005.geckolog")).unwrap();
    assert!(!bytes.is_empty());
    assert_eq!(bytes.len() % 35, 0);
    for (i, chunk) in bytes.chunks(35).enumerate() {
        let rec = ExperimentRecord::decode(chunk).unwrap();
        assert_eq!(rec.seq as usize, i);
        assert_eq!(rec.experiment_id, 5);
    }
    let sidecar: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("exp_00005.json")).unwrap()).unwrap();
    assert_eq!(
        sidecar["count"].as_u64().unwrap() as usize,
        bytes.len() / 35
    );
}

#[test]
fn register_doc_is_current() {
    let doc = std::fs::read_to_string(repo("docs/register-map.md")).unwrap();
    assert_eq!(doc, register_map_markdown());
}

#[test]
fn shipped_scenarios_load() {
    for name in ["nominal", "manual", "misaligned", "pull_bench"] {
        gecko_core::config::ScenarioConfig::load(Path::new(&scenario(name)), &[])
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
