mod common;

use std::fs;

use common::{cli, cli_status};

fn small_synth(dir: &std::path::Path) -> std::path::PathBuf {
    let out = dir.join("synth");
    cli(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "2",
        "--beats-per-category",
        "24",
        "--segment-length",
        "128",
        "--sampling-rate",
        "90",
        "--corruption-rate",
        "0.3",
    ]);
    out
}

const SMALL_NETS: [&str; 14] = [
    "--epochs",
    "1",
    "--stage1-epochs",
    "2",
    "--batch-size",
    "16",
    "--set",
    "nn.stem_filters=4",
    "--set",
    "nn.num_blocks=2",
    "--set",
    "nn.filter_schedule=4,4",
    "--set",
    "stage1.filters=4,4,4",
];

#[test]
fn no_arguments_prints_usage_and_fails() {
    let (code, stderr) = cli_status(&[]);
    assert_ne!(code, 0);
    assert!(stderr.contains("Usage"), "{stderr}");
    assert_eq!(cli_status(&["--help"]).0, 0);
    assert_eq!(cli_status(&["--version"]).0, 0);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.epochs = 2\nconfident.treshold = 0.5\n").unwrap();
    let out = dir.path().join("o");
    let (code, stderr) = cli_status(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("confident.treshold"), "{stderr}");
}

#[test]
fn flags_override_file_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "command = synth\nsynth.beats_per_category = 3\nsynth.segment_length = 64\nseed = 9\n").unwrap();
    let out = dir.path().join("o");
    cli(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"]);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for line in ["command = synth", "seed = 4", "synth.beats_per_category = 3", "synth.segment_length = 64", "train.epochs = 100"] {
        assert!(manifest.lines().any(|l| l == line), "missing `{line}` in\n{manifest}");
    }
    let truth = fs::read_to_string(out.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 1 + 15);

    let (code, stderr) = cli_status(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn sweep_reports_one_row_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let segments = small_synth(dir.path()).join("segments");
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--out",
        out.to_str().unwrap(),
        "--train",
        segments.to_str().unwrap(),
        "--test",
        segments.to_str().unwrap(),
        "--thresholds",
        "0.3..0.99",
    ];
    args.extend_from_slice(&SMALL_NETS);
    cli(&args);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("threshold,accuracy,kept_fraction,stage1_accuracy"));
    let thresholds: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(thresholds, vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99]);
    assert!(out.join("sweep_failures.txt").exists());
}

#[test]
fn synth_preprocess_denoise_train_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(dir.path());
    let record = synth.join("record.dat");
    assert!(synth.join("record.hdr").exists() && synth.join("record.ann.csv").exists());

    let prep = dir.path().join("prep");
    cli(&[
        "preprocess",
        "--out",
        prep.to_str().unwrap(),
        "--input",
        record.to_str().unwrap(),
        "--window-size",
        "96",
        "--step",
        "16",
        "--balance-per-class",
        "40",
    ]);
    let counts = fs::read_to_string(prep.join("report.csv")).unwrap();
    assert!(counts.starts_with("split,N,V,S,A,Q,total\nall,40,40,40,40,40,200\n"), "{counts}");

    let den = dir.path().join("den");
    cli(&["denoise", "--out", den.to_str().unwrap(), "--input", record.to_str().unwrap()]);
    assert!(den.join("denoised.dat").exists() && den.join("figures-data/denoise.csv").exists());

    let (train_dir, test_dir) = (prep.join("train"), prep.join("test"));
    let trained = dir.path().join("train");
    let mut args = vec![
        "train",
        "--out",
        trained.to_str().unwrap(),
        "--train",
        train_dir.to_str().unwrap(),
        "--test",
        test_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(&SMALL_NETS[2..]);
    args.extend_from_slice(&["--epochs", "2"]);
    cli(&args);
    let curve = fs::read_to_string(trained.join("report.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    let ckpt = trained.join("checkpoints/final.ckpt");
    let ev = dir.path().join("eval");
    cli(&[
        "eval",
        "--out",
        ev.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--test",
        test_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read_to_string(ev.join("report.csv")).unwrap(),
        fs::read_to_string(trained.join("metrics.csv")).unwrap()
    );
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, stderr) = cli_status(&["eval", "--out", out.to_str().unwrap(), "--checkpoint", "/no/such.ckpt", "--test", "/no/such"]);
    assert_eq!(code, 3, "{stderr}");
}
