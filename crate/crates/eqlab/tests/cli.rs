//! End-to-end tests of the `eqlab` binary: exit codes, file outputs, and
//! flag semantics.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn eqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{
            "seed": 3,
            "dataset": {
                "kind": "classification",
                "profile": {"num_classes": 6, "n_max": 40, "imbalance_factor": 20.0},
                "feature_dim": 8,
                "noise_sigma": 1.0,
                "test_per_class": 5
            },
            "loss": {"kind": "sigmoid_ce"},
            "schedule": {"total_iters": 30, "base_lr": 0.1, "batch_size": 16},
            "eval_every": 0
        }"#,
    )
    .unwrap();
    path
}

fn repo_config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn gen_data_writes_longtail_sidecar_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let config = repo_config("cifar_lt_dataset.json");
    let run = eqlab(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(run.status.success(), "{run:?}");

    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
    let counts: Vec<u64> = sidecar["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(*counts.iter().max().unwrap(), 500);
    assert_eq!(*counts.iter().min().unwrap(), 2);

    let first = std::fs::read(out.join("train.bin")).unwrap();
    let rerun = eqlab(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(rerun.status.success());
    let second = std::fs::read(out.join("train.bin")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn gen_data_rejects_invalid_imbalance_factor() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_config("cifar_lt_dataset.json");
    let run = eqlab(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--set",
        "dataset.profile.imbalance_factor=0.5",
    ]);
    assert_eq!(run.status.code(), Some(1), "{run:?}");
    assert!(!run.stderr.is_empty());
}

#[test]
fn gen_data_materializes_proposal_window() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("prop.json");
    std::fs::write(
        &config,
        r#"{
            "kind": "proposals",
            "profile": {"num_classes": 5, "n_max": 30, "imbalance_factor": 10.0},
            "fg_ratio": 1, "bg_ratio": 3, "batch_size": 32,
            "feature_dim": 6, "noise_sigma": 1.0
        }"#,
    )
    .unwrap();
    let out = dir.path().join("window");
    let run = eqlab(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--batches",
        "3",
    ]);
    assert!(run.status.success(), "{run:?}");
    let features = std::fs::read(out.join("proposals.bin")).unwrap();
    assert_eq!(features.len(), 3 * 32 * 6 * 4);
    let labels: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("proposal_labels.json")).unwrap())
            .unwrap();
    assert_eq!(labels.as_array().unwrap().len(), 3);
}

#[test]
fn train_writes_artifacts_and_seed_override_changes_only_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let run = eqlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{run:?}");
    for name in ["config.json", "metrics.csv", "summary.json", "ledgers.csv", "model.bin"] {
        assert!(out_a.join(name).exists(), "{name} missing");
    }
    let run = eqlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let mut a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("config.json")).unwrap()).unwrap();
    let mut b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_b.join("config.json")).unwrap()).unwrap();
    assert_eq!(a["seed"], 3);
    assert_eq!(b["seed"], 99);
    // Only seed and out_dir may differ.
    for doc in [&mut a, &mut b] {
        doc.as_object_mut().unwrap().remove("seed");
        doc.as_object_mut().unwrap().remove("out_dir");
    }
    assert_eq!(a, b);
}

#[test]
fn train_exit_codes_distinguish_config_io_and_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());

    // Missing config file: I/O error.
    let run = eqlab(&["train", "--config", "/nonexistent/x.json", "--out", "/tmp/x"]);
    assert_eq!(run.status.code(), Some(3), "{run:?}");

    // Invalid field value: config error.
    let run = eqlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "schedule.momentum=2.0",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(1), "{run:?}");

    // Missing output directory: config error.
    let run = eqlab(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1), "{run:?}");

    // Blow up the learning rate: divergence guard.
    let run = eqlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "schedule.base_lr=1e160",
        "--out",
        dir.path().join("div").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2), "{run:?}");
}

#[test]
fn sweep_single_point_grid_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"seed": [3]}"#).unwrap();
    let out = dir.path().join("sweep");
    let run = eqlab(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{run:?}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("run,seed,status"));
    assert!(lines[1].starts_with("0,3,ok"));

    // The run directory holds the same summary a direct train produces.
    let sweep_summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("run_000/summary.json")).unwrap(),
    )
    .unwrap();
    let direct = dir.path().join("direct");
    eqlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        direct.to_str().unwrap(),
    ]);
    let train_summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(direct.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(sweep_summary, train_summary);
}

#[test]
fn sweep_continues_past_failing_runs_and_rejects_empty_grids() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let grid = dir.path().join("grid.json");
    // Second point diverges; first and third succeed.
    std::fs::write(&grid, r#"{"schedule.base_lr": [0.1, 1e160, 0.05]}"#).unwrap();
    let out = dir.path().join("sweep");
    let run = eqlab(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--parallel",
        "2",
    ]);
    assert!(run.status.success(), "{run:?}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let statuses: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(statuses, vec!["ok", "error", "ok"]);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "{}").unwrap();
    let run = eqlab(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--grid",
        empty.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn eval_and_export_ledgers_consume_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let run_dir = dir.path().join("run");
    assert!(eqlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ])
    .status
    .success());

    let run = eqlab(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        run_dir.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{run:?}");
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!(report["num_samples"].as_u64().unwrap() > 0);

    let ledger_dir = dir.path().join("replay");
    let run = eqlab(&[
        "export-ledgers",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        run_dir.to_str().unwrap(),
        "--iters",
        "20",
        "--out",
        ledger_dir.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{run:?}");
    let csv = std::fs::read_to_string(ledger_dir.join("ledgers.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7); // header + 6 categories
}
