//! End-to-end experiment runs through the library and the command-line tool.

use std::path::Path;
use std::process::Command;

use dlps_harness::config::ExperimentConfig;
use dlps_harness::dataset::{load_dataset, make_synthetic_dataset, write_dataset, SyntheticKind, SyntheticSpec};
use dlps_harness::experiment::{evaluate, run_experiment, sample, simulate, CSV_HEADER, METRICS};
use dlps_harness::metrics::{mean_std, PSNR_CAP};
use dlps_harness::pnm::Image;

fn config(output: &Path, body: &str) -> ExperimentConfig {
    let text = format!("seed = 5\noutput = \"{}\"\n{body}", output.display());
    ExperimentConfig::from_toml(&text).unwrap()
}

const SMALL: &str = r#"
n_chains = 3

[data.synthetic]
height = 12
width = 12
count = 4
seed = 2

[sampler]
outer_steps = 5
inner_steps = 4
"#;

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn pooled_aggregates_match_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let report = run_experiment(&cfg).unwrap();
    let rows = parse_csv(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap());
    assert_eq!(rows.len(), 4 * 3);
    assert!(rows.iter().all(|r| r[8] == "ok"));
    for (col, metric) in METRICS.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r[3 + col].parse().unwrap()).collect();
        let (mean, std) = mean_std(&values);
        let agg = report.pooled(metric).unwrap();
        assert!((agg.mean - mean).abs() < 1e-9, "{metric}");
        assert!((agg.std - std).abs() < 1e-9, "{metric}");
        assert_eq!(agg.count, values.len());
    }
    for (c, per_seed) in report.per_seed.iter().enumerate() {
        let values: Vec<f64> = rows.iter().filter(|r| r[1] == c.to_string()).map(|r| r[4].parse().unwrap()).collect();
        let acc = per_seed.iter().find(|(m, _)| m == "accuracy").unwrap().1;
        assert!((acc.mean - mean_std(&values).0).abs() < 1e-9);
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("pooled accuracy mean"));
    assert!(dir.path().join("config.toml").exists());
    assert!(dir.path().join("measurements").join("item_0000.pgm").exists());
}

#[test]
fn evaluate_reproduces_the_sampling_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    simulate(&cfg).unwrap();
    let sampled = sample(&cfg).unwrap();
    let csv = std::fs::read(dir.path().join("metrics.csv")).unwrap();
    let rescored = evaluate(&cfg).unwrap();
    assert_eq!(sampled.rows, rescored.rows);
    assert_eq!(std::fs::read(dir.path().join("metrics.csv")).unwrap(), csv);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config(a.path(), SMALL)).unwrap();
    run_experiment(&config(b.path(), SMALL)).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "metrics.csv"), read(b.path(), "metrics.csv"));
    for c in 0..3 {
        let name = format!("reconstructions/item_0002_c{c}.pgm");
        assert_eq!(read(a.path(), &name), read(b.path(), &name));
    }
}

/// Noise-free identity measurements. At the truth the residual vanishes and
/// so does the likelihood gradient, so a large locality penalty (small η)
/// keeps correct pixels in place while raw gradients flip the wrong ones.
#[test]
fn noiseless_identity_recovers_every_image() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[data.synthetic]
height = 8
width = 8
count = 6

[operator]
kind = "identity"
sigma_y = 0.0

[sampler]
outer_steps = 1
eta = 0.01
precondition = false
"#;
    let report = run_experiment(&config(dir.path(), body)).unwrap();
    for row in &report.rows {
        assert_eq!(row.accuracy, Some(100.0), "{}", row.image);
        assert_eq!(row.psnr, Some(PSNR_CAP));
        assert_eq!((row.iou, row.f1), (Some(1.0), Some(1.0)));
    }
}

#[test]
fn colour_datasets_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { kind: SyntheticKind::Color { levels: 5 }, height: 6, width: 7, channels: 3, count: 4, seed: 9 };
    let data = make_synthetic_dataset(&spec).unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.items, data.items);
    assert_eq!(loaded.grid, data.grid);
    let img = Image::load(&dir.path().join(&data.names[0])).unwrap();
    assert_eq!(img.to_tokens(&data.vocab), data.items[0]);
}

#[test]
fn missing_measurements_are_reported_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = sample(&config(dir.path(), SMALL)).unwrap_err().to_string();
    assert!(err.contains("measurements"), "{err}");
}

fn dlps(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dlps")).args(args).output().unwrap()
}

#[test]
fn command_line_generates_data_and_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dlps(&["make-data", "--out", data.to_str().unwrap(), "--height", "8", "--width", "8", "--count", "3"]);
    assert!(out.status.success());
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, format!("[data]\npath = \"{}\"\n", data.display())).unwrap();
    let output = dir.path().join("out");
    let out = dlps(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--chains",
        "2",
        "--set",
        "sampler.outer_steps=3",
        "--set",
        "operator.kind=box",
        "--set",
        "operator.box_side=4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = ExperimentConfig::load(&output.join("config.toml")).unwrap();
    assert_eq!(echo.sampler.outer_steps, 3);
    assert_eq!(echo.n_chains, 2);
    assert_eq!(parse_csv(&std::fs::read_to_string(output.join("metrics.csv")).unwrap()).len(), 6);

    let bad = dlps(&["run", "--config", config.to_str().unwrap(), "--set", "sampler.bogus=1"]);
    assert!(!bad.status.success());
}
