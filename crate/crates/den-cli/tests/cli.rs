//! End-to-end tests for the `den` binary: exit codes, artifact layout, and a
//! full staged run on a small synthetic dataset.

use std::path::Path;
use std::process::{Command, Output};

fn den(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_den"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn den")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Fast training profile for tests; k is small because the blobs are small.
fn write_test_config(dir: &Path) -> String {
    let path = dir.join("test.cfg");
    std::fs::write(
        &path,
        "k = 8\n\
         j = 1\n\
         epochs_embed = 15\n\
         epochs_head = 10\n\
         epochs_finetune = 5\n\
         batch_size = 64\n\
         knn_filter_neighbors = 10\n\
         seed = 7\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&den(dir.path(), &["--help"])), 0);
    assert_eq!(code(&den(dir.path(), &["--version"])), 0);
    assert_eq!(code(&den(dir.path(), &["embed", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // unknown subcommand
    assert_eq!(code(&den(dir.path(), &["frobnicate"])), 1);
    // missing required flag
    assert_eq!(code(&den(dir.path(), &["embed"])), 1);
    // bad config file key
    std::fs::write(dir.path().join("bad.cfg"), "no_such_key = 1\n").unwrap();
    let out = den(dir.path(), &["--config", "bad.cfg", "check-loss"]);
    assert_eq!(code(&out), 1);
    // invalid config combination (fine-tune lr must be below lr)
    std::fs::write(dir.path().join("inv.cfg"), "lr = 1e-4\nlr_finetune = 1e-3\n").unwrap();
    let out = den(dir.path(), &["--config", "inv.cfg", "check-loss"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = den(dir.path(), &["embed", "--input", "nope.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn make_blobs_writes_labeled_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = den(
        dir.path(),
        &[
            "--seed", "3", "make-blobs", "--clusters", "3", "--points", "10", "--dim", "4",
        ],
    );
    assert_ok(&out, "make-blobs");
    let text = std::fs::read_to_string(dir.path().join("blobs.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    // 30 samples; labels are the last column with 3 distinct values
    let data_rows: Vec<&str> = rows
        .iter()
        .copied()
        .filter(|r| r.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-'))
        .collect();
    assert_eq!(data_rows.len(), 30);
    let labels: std::collections::BTreeSet<&str> = data_rows
        .iter()
        .map(|r| r.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(labels.len(), 3);
}

#[test]
fn check_loss_reports_approximation_quality() {
    let dir = tempfile::tempdir().unwrap();
    let out = den(dir.path(), &["check-loss", "--n-list", "2,8", "--steps", "50"]);
    assert_ok(&out, "check-loss");
    let table = std::fs::read_to_string(dir.path().join("loss_table.csv")).unwrap();
    assert!(table.lines().count() > 100);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains('%'), "summary should quote the worst Laplace error");
}

#[test]
fn staged_flow_matches_pipeline_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_test_config(dir.path());
    let base: &[&str] = &["--config", &cfg, "--threads", "1"];

    let run = |args: &[&str]| {
        let mut all = base.to_vec();
        all.extend_from_slice(args);
        den(dir.path(), &all)
    };

    assert_ok(
        &run(&[
            "make-blobs", "--clusters", "3", "--points", "40", "--dim", "5", "--spread", "0.5",
        ]),
        "make-blobs",
    );
    assert_ok(&run(&["embed", "--input", "blobs.csv", "--labeled"]), "embed");
    for f in ["edges.txt", "embedding.csv", "loss_history.csv", "checkpoint.json"] {
        assert!(dir.path().join(f).exists(), "embed should write {f}");
    }

    assert_ok(
        &run(&["cluster", "--embedding", "embedding.csv", "--edges", "edges.txt"]),
        "cluster",
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cluster_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_clusters"], 3, "three well-separated blobs");

    assert_ok(
        &run(&[
            "fit-head", "--embedding", "embedding.csv", "--labels", "labels.csv",
            "--checkpoint", "checkpoint.json",
        ]),
        "fit-head",
    );
    assert_ok(
        &run(&[
            "finetune", "--input", "blobs.csv", "--labeled", "--model", "model.json",
            "--labels", "labels.csv",
        ]),
        "finetune",
    );
    assert_ok(
        &run(&[
            "explain", "--input", "blobs.csv", "--labeled", "--model", "model.json",
            "--samples", "0,1", "--background-size", "20",
        ]),
        "explain",
    );
    let attr = std::fs::read_to_string(dir.path().join("attributions.csv")).unwrap();
    assert_eq!(attr.lines().count(), 3, "header + 2 samples");

    assert_ok(
        &run(&["metrics", "--pred", "labels.csv", "--truth", "labels.csv"]),
        "metrics",
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["nmi"], 1.0);

    assert_ok(
        &run(&["plot", "--embedding", "embedding.csv", "--labels", "labels.csv"]),
        "plot",
    );
    let svg = std::fs::read_to_string(dir.path().join("scatter.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn pipeline_writes_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_test_config(dir.path());

    let out = den(
        dir.path(),
        &[
            "--config", &cfg, "--threads", "1",
            "make-blobs", "--clusters", "3", "--points", "40", "--dim", "5", "--spread", "0.5",
        ],
    );
    assert_ok(&out, "make-blobs");

    let run_pipeline = |out_dir: &str| {
        den(
            dir.path(),
            &[
                "--config", &cfg, "--threads", "1", "--out-dir", out_dir,
                "pipeline", "--input", "blobs.csv", "--labeled", "--no-explain",
            ],
        )
    };
    std::fs::create_dir_all(dir.path().join("run_a")).unwrap();
    std::fs::create_dir_all(dir.path().join("run_b")).unwrap();
    assert_ok(&run_pipeline("run_a"), "pipeline run a");
    assert_ok(&run_pipeline("run_b"), "pipeline run b");

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run_a/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["n_samples"], 120);
    assert_eq!(manifest["n_clusters"], 3);
    let stages = manifest["stages"].as_array().unwrap();
    assert!(stages.len() >= 6);
    for stage in stages {
        assert!(stage["seconds"].as_f64().unwrap() >= 0.0);
        assert!(stage["stage"].is_string());
    }
    assert!(manifest["metrics"]["nmi"].as_f64().unwrap() > 0.9);

    // single-threaded runs with the same seed are bitwise identical
    for f in ["embedding.csv", "labels.csv", "predicted_labels.csv"] {
        let a = std::fs::read(dir.path().join("run_a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("run_b").join(f)).unwrap();
        assert_eq!(a, b, "{f} should not vary between identical runs");
    }
}
