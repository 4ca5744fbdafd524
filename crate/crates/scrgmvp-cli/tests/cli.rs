use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scrgmvp::io::write_returns_csv;
use scrgmvp::sampling::{generate_returns, MeanVector};
use scrgmvp::spiked::SpikedCovariance;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scrgmvp"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sample_returns_10x5.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = run(&["simulate-compare", "--does-not-exist"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage") || stderr.contains("--help"), "{stderr}");
}

#[test]
fn missing_returns_file_exits_3_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("records.csv");
    let out = run(&[
        "weights",
        "--input",
        "/no/such/returns.csv",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/no/such/returns.csv"), "{stderr}");
}

#[test]
fn weights_on_bundled_fixture_sum_to_one() {
    let out = run(&["weights", "--input", fixture().to_str().unwrap(), "--estimator", "scre"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("asset,weight"));
    let weights: Vec<f64> = lines
        .map(|line| line.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(weights.len(), 5);
    let total: f64 = weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-10, "weights sum to {total}");
}

#[test]
fn simulate_compare_is_reproducible_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let common = [
        "simulate-compare",
        "--dim",
        "10",
        "--n-grid",
        "30",
        "--reps",
        "5",
        "--seed",
        "7",
        "--grid-resolution",
        "20",
    ];
    for (out_path, workers) in [(&a, "1"), (&b, "2")] {
        let out = bin()
            .args(common)
            .args(["--out", out_path.to_str().unwrap(), "--workers", workers])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // Identical seeds, different worker counts: byte-identical records.
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let summary = dir.path().join("a.csv.summary.csv");
    let text = std::fs::read_to_string(summary).unwrap();
    assert!(text.starts_with("estimator,n,mean_risk,stderr,reps"));
    assert!(text.lines().count() > 1);
}

#[test]
fn grid_scan_writes_surface() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("scan.csv");
    let out = run(&[
        "grid-scan",
        "--dim",
        "10",
        "--n",
        "40",
        "--grid-resolution",
        "15",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("phi1,phi2,gbar"));
    assert_eq!(text.lines().count(), 1 + 15 * 15);
}

#[test]
fn backtest_runs_on_synthetic_csv_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let returns_path = dir.path().join("synthetic.csv");
    let model =
        SpikedCovariance::canonical(1.0, 8, &[(1, 12.0), (-1, -0.9)]).unwrap();
    let panel = generate_returns(&model, &MeanVector::zeros(8), 70, 5).unwrap();
    write_returns_csv(&returns_path, &panel, None).unwrap();

    let out_path = dir.path().join("bt.csv");
    let manifest_path = dir.path().join("manifest.txt");
    let out = run(&[
        "backtest",
        "--input",
        returns_path.to_str().unwrap(),
        "--window",
        "40",
        "--horizon",
        "10",
        "--reps",
        "5",
        "--spikes",
        "1,1",
        "--estimators",
        "scme,scre",
        "--out",
        out_path.to_str().unwrap(),
        "--manifest",
        manifest_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = std::fs::read_to_string(&out_path).unwrap();
    assert!(records.starts_with("estimator,M,n,rep,seed,risk,phi1,phi2,gamma1,gamma2"));
    // 2 estimators x 5 windows + header.
    assert_eq!(records.lines().count(), 11);

    let manifest = std::fs::read_to_string(&manifest_path).unwrap();
    assert!(manifest.contains("[run]"));
    assert!(manifest.contains("window = 40"));
}

#[test]
fn config_file_drives_the_model_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.conf");
    std::fs::write(
        &config_path,
        "[model]\ndim = 12\nsigma2 = 1.0\nspike = 1 8\nspike = -1 -0.9\n\n[experiment]\nreps = 4\nn-grid = 30\nseed = 3\ngrid-resolution = 15\nestimators = scme,scre\n",
    )
    .unwrap();
    let out_path = dir.path().join("records.csv");
    let out = run(&[
        "simulate-compare",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    // 2 estimators x 4 reps + header (no oracle requested).
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().skip(1).all(|l| l.contains(",12,30,")));

    // Flag overrides the configured rep count.
    let out2_path = dir.path().join("records2.csv");
    let out = run(&[
        "simulate-compare",
        "--config",
        config_path.to_str().unwrap(),
        "--reps",
        "2",
        "--out",
        out2_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&out2_path).unwrap().lines().count(), 5);
}
