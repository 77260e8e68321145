use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use gvfl_cli::report::reaggregate;
use gvfl_cli::ExperimentConfig;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn gvfl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvfl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn toy() -> String {
    configs_dir().join("toy.toml").display().to_string()
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn unknown_method_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = gvfl(&["attack", "--config", &toy(), "--method", "nettack"], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nettack"));
    assert!(!out.exists());
}

#[test]
fn clean_toy_run_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clean");
    let start = Instant::now();
    let o = gvfl(&["train", "--config", &toy(), "--seed-override", "0"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    for f in ["config.toml", "seed-0.json", "aggregate.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("clean_accuracy"));
}

#[test]
fn report_matches_written_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("attack");
    let o = gvfl(&["attack", "--config", &toy(), "--seed-override", "0,1", "--method", "rnd"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let rows = reaggregate(&out).unwrap();
    assert!(rows.iter().any(|r| r.metric == "test_accuracy_after" && r.runs == 2));
    let csv = dir.path().join("again.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_gvfl"))
        .args(["report", "--dir"])
        .arg(&out)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(out.join("aggregate.csv")).unwrap());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = gvfl(
        &[
            "sweep", "--config", &toy(), "--seed-override", "0", "--method", "rnd", "--axis", "k", "--values", "4,8",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("k-4").join("seed-0.json").is_file());
    assert!(out.join("k-8").join("seed-0.json").is_file());
    assert!(out.join("sweep-k.csv").is_file());
}

#[test]
fn bad_sweep_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = gvfl(&["sweep", "--config", &toy(), "--axis", "epsilon", "--values", "1:0:0.1"], &dir.path().join("s"));
    assert!(!o.status.success());
}
