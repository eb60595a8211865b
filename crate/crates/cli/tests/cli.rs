use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lvkd_cli::config::{RunConfig, OUT_ENV};
use lvkd_student::distillation::{LearningRate, TrainingConfig};
use lvkd_student::ModelConfig;

fn lvkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvkd"))
        .args(args)
        .env_remove(OUT_ENV)
        .output()
        .unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn write_config(root: &Path, blocks: usize) -> PathBuf {
    let mut config = RunConfig::with_root(root);
    config.seed = 5;
    config.phantom.train = 12;
    config.phantom.val = 4;
    config.phantom.test = 4;
    config.phantom.frames = 24;
    config.phantom.height = 32;
    config.phantom.width = 32;
    config.model = ModelConfig::grid(blocks, 1, (32, 32));
    config.training = TrainingConfig {
        learning_rate: LearningRate {
            initial: 0.05,
            decay_at_fraction: 0.7,
            decay_factor: 0.1,
        },
        batch_size: 4,
        sequence_length: 8,
        max_epochs: 2,
        ..TrainingConfig::default()
    };
    std::fs::create_dir_all(root).unwrap();
    let path = root.join("run.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = lvkd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_succeeds() {
    let out = lvkd(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "phantom-gen",
        "pseudolabel",
        "train",
        "eval-seg",
        "eval-afd",
        "eval-lvm",
        "bounds",
        "scaling-fit",
        "report",
    ] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn missing_config_is_a_config_error() {
    let out = lvkd(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
    let out = lvkd(&["train", "--config", "/nonexistent/run.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), 1);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["surprise"] = serde_json::json!(1);
    std::fs::write(&path, value.to_string()).unwrap();
    let out = lvkd(&["phantom-gen", "--config", path.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    value.as_object_mut().unwrap().remove("surprise");
    value["schema_version"] = serde_json::json!(99);
    std::fs::write(&path, value.to_string()).unwrap();
    assert_eq!(
        lvkd(&["phantom-gen", "--config", path.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(
        lvkd(&["phantom-gen", "--config", path.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn evaluating_without_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), 1);
    let out = lvkd(&["eval-seg", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "data");
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn bounds_prints_floor_and_ceiling() {
    let out = lvkd(&["bounds", "--rmse", "5.7", "--corr", "0.801"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let floor = v["rmse_floor"].as_f64().unwrap();
    let ceiling = v["corr_ceiling"].as_f64().unwrap();
    assert!((floor - 4.0305).abs() < 1e-3, "{v}");
    assert!((ceiling - 0.8950).abs() < 1e-4, "{v}");
    assert_eq!(lvkd(&["bounds", "--rmse", "5.7"]).status.code(), Some(2));
}

#[test]
fn scaling_fit_requires_a_kind_for_mixed_files() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    let mut text = String::from("param_count,metric_kind,metric_value\n");
    for n in [10_000u64, 40_000, 160_000, 640_000] {
        text.push_str(&format!("{n},AFD_SUM,{}\n", (n as f64).powf(-0.2)));
        text.push_str(&format!("{n},ONE_MINUS_DICE,{}\n", (n as f64).powf(-0.1)));
    }
    std::fs::write(&points, text).unwrap();
    let p = points.to_str().unwrap();
    assert_eq!(lvkd(&["scaling-fit", "--points", p]).status.code(), Some(2));
    let out_dir = dir.path().join("fit");
    let out = lvkd(&[
        "scaling-fit",
        "--points",
        p,
        "--kind",
        "AFD_SUM",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["slope"].as_f64().unwrap() - 0.2).abs() < 1e-9, "{v}");
    assert!(out_dir.join("scaling_fit.json").is_file());
    assert!(out_dir.join("run_manifest.scaling-fit.json").is_file());
}

fn run_ok(args: &[&str]) -> Output {
    let out = lvkd(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn phantom_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut run_dirs = Vec::new();
    for blocks in [1, 2] {
        let root = dir.path().join(format!("b{blocks}"));
        let config = write_config(&root, blocks);
        let c = config.to_str().unwrap();
        run_ok(&["phantom-gen", "--config", c]);
        let first = run_ok(&["pseudolabel", "--config", c]);
        assert!(String::from_utf8_lossy(&first.stdout).contains("computed 20, reused 0"));
        let second = run_ok(&["pseudolabel", "--config", c]);
        assert!(String::from_utf8_lossy(&second.stdout).contains("computed 0, reused 20"));
        let train = run_ok(&["train", "--config", c]);
        let summary: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
        assert!(summary["threshold"].as_f64().is_some(), "{summary}");
        let seg = run_ok(&["eval-seg", "--config", c]);
        let seg: serde_json::Value = serde_json::from_slice(&seg.stdout).unwrap();
        let d = seg["mean_dice"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&d));
        run_ok(&["eval-afd", "--config", c]);
        run_ok(&["eval-lvm", "--config", c]);
        let out = root.join("out");
        for f in [
            "model.ckpt",
            "history.csv",
            "seg_scores.csv",
            "afd.csv",
            "lvm_quality.csv",
            "run_manifest.train.json",
        ] {
            assert!(out.join(f).is_file(), "missing {f}");
        }
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(out.join("run_manifest.eval-seg.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["subcommand"], "eval-seg");
        assert!(manifest["config_hash"]
            .as_str()
            .is_some_and(|h| h.len() == 64));
        run_dirs.push(out);
    }
    let report_dir = dir.path().join("report");
    let mut args = vec!["report".to_string()];
    for r in &run_dirs {
        args.push("--run".into());
        args.push(r.to_str().unwrap().into());
    }
    args.push("--out".into());
    args.push(report_dir.to_str().unwrap().into());
    run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let grid = std::fs::read_to_string(report_dir.join("grid_dice.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "layers,B1,B2,B3,B4");
    assert_eq!(lines.len(), 5);
    let l1: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(l1[0], "l1");
    assert!(!l1[1].is_empty() && !l1[2].is_empty() && l1[3].is_empty());
    assert!(report_dir.join("methods.csv").is_file());
    assert!(report_dir.join("scaling_points.csv").is_file());

    // the same run twice in one report is ambiguous
    let dup = lvkd(&[
        "report",
        "--run",
        run_dirs[0].to_str().unwrap(),
        "--run",
        run_dirs[0].to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert_ne!(dup.status.code(), Some(0));
}
