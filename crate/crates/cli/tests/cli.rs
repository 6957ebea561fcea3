use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clusterhead::{EXIT_CHECK_FAILED, EXIT_RUNTIME, EXIT_USAGE};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clusterhead")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--epochs", "20", "--n-train", "256", "--n-test", "128", "--snapshot-every", "5"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", path(out)]);
    cli(&args)
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = cli(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn invalid_value_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["train", "--k", "20", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "epochz = 3\n").unwrap();
    let out = cli(&["train", "--config", path(&cfg), "--out", path(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn missing_run_dir_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["report", path(&tmp.path().join("absent"))]);
    assert_eq!(out.status.code(), Some(EXIT_RUNTIME));
}

#[test]
fn grad_check_exits_3_when_tolerance_is_unreachable() {
    let out = cli(&["grad-check", "--seeds", "1", "--batch", "8", "--fd-tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(EXIT_CHECK_FAILED));
    let ok = cli(&["grad-check", "--seeds", "2", "--batch", "8"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "epochs = 7\nseed = 11\n[hyper]\nh = 8\n").unwrap();
    let run = tmp.path().join("run");
    let out = small_train(&run, &["--config", path(&cfg), "--h", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo: toml::Table = fs::read_to_string(run.join("config.echo")).unwrap().parse().unwrap();
    // --epochs 20 from the command line beats the file; seed comes from the file.
    assert_eq!(echo["epochs"].as_integer(), Some(20));
    assert_eq!(echo["seed"].as_integer(), Some(11));
    assert_eq!(echo["hyper"]["h"].as_integer(), Some(4));
}

#[test]
fn train_render_report_bound_check() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = small_train(&run, &["--theory-mode"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "run.jsonl", "config.echo"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let rows = fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count();
    assert_eq!(rows, 22, "header plus epochs 0..=20");

    let frames = tmp.path().join("frames");
    assert!(cli(&["render", path(&run), "--every", "10", "--out", path(&frames)]).status.success());
    let mut names: Vec<String> = fs::read_dir(&frames).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["frame_000000.svg", "frame_000010.svg", "frame_000020.svg", "metrics.svg"]);
    let frame = fs::read_to_string(frames.join("frame_000010.svg")).unwrap();
    assert!(frame.starts_with("<svg") && frame.trim_end().ends_with("</svg>"));

    assert!(cli(&["report", path(&run)]).status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert!(report["final_test_accuracy"].is_number());

    let bound = cli(&["bound-check", path(&run)]);
    assert!(bound.status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("bound.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["entries"].as_array().unwrap().len(), 5);
}

#[test]
fn finetune_grows_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let pre = tmp.path().join("pre");
    assert!(small_train(&pre, &[]).status.success());
    let ft = tmp.path().join("ft");
    let out = cli(&["finetune", "--from", path(&pre), "--epochs", "5", "--out", path(&ft)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo: toml::Table = fs::read_to_string(ft.join("config.echo")).unwrap().parse().unwrap();
    assert_eq!(echo["hyper"]["task"]["p"].as_integer(), Some(3));
    assert_eq!(echo["n_train"].as_integer(), Some(256), "inherits the pretrained config");
}

#[test]
fn sparsity_sweep_writes_one_row_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&[
        "sparsity-sweep", "--epochs", "5", "--n-train", "128", "--n-test", "64", "--batch-size", "64", "--seeds", "3", "--eps-points", "4",
        "--out", path(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("sparsity.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), 3 + 4);
}
