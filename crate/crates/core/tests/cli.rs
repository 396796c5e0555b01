use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tmclust::cli::dataset::write_dataset;
use tmclust::cli::{load_dataset, DataFormat, FitResultDocument};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn tmclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmclust"))
        .args(args)
        .env_remove("TMCLUST_THREADS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fit_tiny(dir: &Path, extra: &[&str]) -> Output {
    let manifest = data("tiny.json");
    let out = dir.join("fit.json");
    let labels = dir.join("labels.csv");
    let mut args = vec![
        "fit", "--manifest", s(&manifest), "--groups", "2",
        "--out", s(&out), "--labels-out", s(&labels),
    ];
    args.extend_from_slice(extra);
    tmclust(&args)
}

#[test]
fn fit_recovers_bundled_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = fit_tiny(dir.path(), &["--scale-models", "MCD-VVI,VVV"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let doc = FitResultDocument::read(&dir.path().join("fit.json")).unwrap();
    assert!(doc.converged);
    assert_eq!(doc.dims, vec![3, 2]);
    assert_eq!(doc.labels.len(), 12);
    assert!(doc.labels.iter().all(|&l| l == 1 || l == 2));
    let second = &doc.components[0].scales[1];
    assert_eq!(second[0][0], 1.0);

    let metrics = tmclust(&[
        "metrics",
        "--labels-a", s(&dir.path().join("labels.csv")),
        "--labels-b", s(&data("tiny_labels.csv")),
    ]);
    assert_eq!(metrics.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&metrics.stdout).unwrap();
    assert_eq!(v["adjusted_rand_index"], 1.0);
    assert_eq!(v["n"], 12);
}

#[test]
fn fit_output_is_reproducible_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(fit_tiny(a.path(), &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(fit_tiny(b.path(), &["--threads", "3"]).status.code(), Some(0));
    for f in ["fit.json", "labels.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn invalid_arguments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let zero = fit_tiny(dir.path(), &["--groups", "0"]);
    assert_eq!(zero.status.code(), Some(1));

    let bad_model = fit_tiny(dir.path(), &["--scale-models", "VVV,XYZ"]);
    assert_eq!(bad_model.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_model.stderr).contains("error"));

    let too_few = fit_tiny(dir.path(), &["--scale-models", "VVV"]);
    assert_eq!(too_few.status.code(), Some(1));

    let missing = tmclust(&["fit", "--manifest", "/nonexistent.json", "--groups", "2", "--out", "x.json"]);
    assert_eq!(missing.status.code(), Some(1));

    assert_eq!(tmclust(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_data_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data("tiny.csv")).unwrap().replacen("-2.9714", "abc", 1);
    std::fs::write(dir.path().join("bad.csv"), text).unwrap();
    let out = tmclust(&[
        "fit", "--manifest", s(&data("tiny.json")), "--data", s(&dir.path().join("bad.csv")),
        "--groups", "2", "--out", s(&dir.path().join("fit.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn scan_writes_table_and_best_model() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("bic.csv");
    let best = dir.path().join("best.json");
    let out = tmclust(&[
        "scan", "--manifest", s(&data("tiny.json")), "--groups", "1..3",
        "--scale-models-grid", "MCD-VVI|VVV,EEE", "--out", s(&table), "--best", s(&best),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "G,spec_d1,spec_d2,loglik,rho,bic,converged,singular_events");
    assert_eq!(lines.len(), 1 + 3 * 2);
    let doc = FitResultDocument::read(&best).unwrap();
    assert_eq!(doc.config.groups, 2);

    let single = tmclust(&[
        "scan", "--manifest", s(&data("tiny.json")), "--groups", "2",
        "--scale-models-grid", "VVV,VVV", "--out", s(&table),
    ]);
    assert_eq!(single.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&table).unwrap().lines().count(), 2);

    let malformed = tmclust(&[
        "scan", "--manifest", s(&data("tiny.json")), "--groups", "2",
        "--scale-models-grid", "VVV|,EEE", "--out", s(&table),
    ]);
    assert_eq!(malformed.status.code(), Some(1));
}

#[test]
fn simulate_single_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"sample_sizes": [42], "dims": [[3, 3, 3]], "replicates": 1}"#).unwrap();
    let report = dir.path().join("report.json");
    let csvs = dir.path().join("csv");
    let out = tmclust(&[
        "simulate", "--config", s(&config), "--seed", "9", "--threads", "2",
        "--out", s(&report), "--csv-dir", s(&csvs),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["replicates"].as_array().unwrap().len(), 1);
    assert_eq!(v["config"]["seed"], 9);
    assert!(csvs.join("replicates.csv").exists());
    assert!(csvs.join("cells.csv").exists());

    std::fs::write(&config, r#"{"replicates": 1, "unknown": true}"#).unwrap();
    let bad = tmclust(&["simulate", "--config", s(&config), "--out", s(&report)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn metrics_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "label\n1\n1\n2\n2\n").unwrap();
    std::fs::write(&b, "label\n1\n2\n1\n2\n").unwrap();
    let out = tmclust(&["metrics", "--labels-a", s(&a), "--labels-b", s(&b)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["adjusted_rand_index"], -0.5);

    std::fs::write(&a, "1,2\n3,4\n").unwrap();
    let out = tmclust(&["metrics", "--est", s(&a), "--truth", s(&a)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["relative_error"], 0.0);

    assert_eq!(tmclust(&["metrics"]).status.code(), Some(1));
}

#[test]
fn csv_and_binary_datasets_fit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = load_dataset(&data("tiny.json")).unwrap();
    let bin = write_dataset(dir.path(), "tiny_bin", &tiny.observations, DataFormat::BinF64).unwrap();
    assert_eq!(load_dataset(&bin).unwrap().observations, tiny.observations);

    let run = |manifest: &Path, out: &Path| {
        tmclust(&["fit", "--manifest", s(manifest), "--groups", "2", "--out", s(out)]).status.code()
    };
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(run(&data("tiny.json"), &a), Some(0));
    assert_eq!(run(&bin, &b), Some(0));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
