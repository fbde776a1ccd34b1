//! The `mixq` binary end to end on the planted task.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mixq(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixq"))
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(output: Output) -> String {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8(output.stdout).unwrap()
}

fn planted_config() -> PathBuf {
    common::workspace_root().join("configs/planted.toml")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn train_then_search_is_reproducible() {
    let cfg = planted_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        ok(mixq(&cfg, d.path(), &["train"]));
        ok(mixq(&cfg, d.path(), &["search"]));
    }
    let (a, b) = (dirs[0].path(), dirs[1].path());
    for name in ["float_metrics.csv", "trajectory.csv", "assignment.csv", "layers.csv", "schemes.csv", "config.toml"] {
        assert_eq!(read(a, name), read(b, name), "{name} differs between reruns");
    }
    assert_eq!(std::fs::read(a.join("float.ckpt")).unwrap(), std::fs::read(b.join("float.ckpt")).unwrap());
    assert_eq!(std::fs::read(a.join("searched.ckpt")).unwrap(), std::fs::read(b.join("searched.ckpt")).unwrap());

    // Planted instance: only the first layer keeps 8 bits.
    let assignment = read(a, "assignment.csv");
    let bits: Vec<&str> = assignment.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(bits, vec!["8", "1", "1"]);

    // The report verb recomputes the same layer table from the checkpoint alone.
    let out = tempfile::tempdir().unwrap();
    let ckpt = a.join("searched.ckpt");
    ok(mixq(&cfg, out.path(), &["report", "--checkpoint", ckpt.to_str().unwrap()]));
    assert_eq!(read(out.path(), "layers.csv"), read(a, "layers.csv"));

    // The oracle verb compares against the searched checkpoint in the same directory.
    let stdout = ok(mixq(&cfg, a, &["oracle"]));
    assert!(stdout.contains("oracle optimum 8-1-1"), "{stdout}");
    assert_eq!(read(a, "oracle.csv").lines().count(), 9);
    let cmp = read(a, "comparison.csv");
    assert_eq!(cmp.lines().nth(1).unwrap(), "8-1-1,112,true,112,1.0000");
}

#[test]
fn seed_flag_changes_the_run() {
    let cfg = planted_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(mixq(&cfg, a.path(), &["train"]));
    ok(mixq(&cfg, b.path(), &["--seed", "7", "train"]));
    assert_ne!(std::fs::read(a.path().join("float.ckpt")).unwrap(), std::fs::read(b.path().join("float.ckpt")).unwrap());
    assert!(read(b.path(), "config.toml").contains("seed = 7"));
}

#[test]
fn unbounded_tolerance_binarizes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(planted_config()).unwrap().replace("theta = 0.25", "theta = inf");
    let cfg = dir.path().join("loose.toml");
    std::fs::write(&cfg, text).unwrap();
    ok(mixq(&cfg, dir.path(), &["train"]));
    ok(mixq(&cfg, dir.path(), &["search"]));
    let layers = read(dir.path(), "layers.csv");
    assert!(layers.lines().last().unwrap().ends_with(",32.0000"), "{layers}");
    for line in layers.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let (before, after): (u64, u64) = (cells[3].parse().unwrap(), cells[4].parse().unwrap());
        assert_eq!(before, 32 * after);
    }
}

#[test]
fn sweep_writes_searched_and_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config();
    ok(mixq(&cfg, dir.path(), &["train"]));
    ok(mixq(&cfg, dir.path(), &["sweep", "--theta", "0.2,0.3,inf"]));
    let curve = read(dir.path(), "curve.csv");
    let rows: Vec<Vec<&str>> = curve.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().filter(|r| r[0] == "searched").count(), 3);
    let refs: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == "reference").collect();
    assert_eq!(refs.len(), 3);
    let rates: Vec<&str> = refs.iter().map(|r| r[3]).collect();
    assert_eq!(rates, vec!["1.0000", "4.0000", "32.0000"]);
    let acc: Vec<f64> = refs.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(acc[0] >= acc[1] && acc[1] >= acc[2], "{acc:?}");
}

#[test]
fn sweep_needs_two_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config();
    ok(mixq(&cfg, dir.path(), &["train"]));
    let out = mixq(&cfg, dir.path(), &["sweep", "--theta", "0.2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least two"));
}

#[test]
fn missing_data_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::workspace_root().join("configs/mnist.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_mixq"))
        .args(["--config", cfg.to_str().unwrap(), "--data-dir", "/nonexistent/mnist", "--out-dir"])
        .arg(dir.path())
        .arg("train")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing data file /nonexistent/mnist/train-images-idx3-ubyte"), "{stderr}");
}

#[test]
fn search_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixq(&planted_config(), dir.path(), &["search"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("float.ckpt"));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[search]\nlearning_rate = 3\n").unwrap();
    let out = mixq(&cfg, dir.path(), &["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}
