//! End-to-end CLI checks: determinism of seeded runs, the perfect-tracking
//! evaluation fixture, manifest enforcement and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmcnet"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dmcnet_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Micro run configuration: tiny channels, few samples, fast everywhere.
fn write_micro_config(dir: &Path) -> PathBuf {
    let config = serde_json::json!({
        "model": {
            "backbone_channels": [4, 6, 8],
            "fc_dim": 12,
            "dropout": 0.0,
            "init_seed": 3
        },
        "trainer": {
            "cycles": 3,
            "frames_per_batch": 2,
            "pos_per_batch": 8,
            "neg_per_batch": 16,
            "lr_backbone_fc": 0.01,
            "lr_adapter_dmc": 0.02
        },
        "tracker": {
            "n_candidates": 24,
            "init_pos": 16,
            "init_neg": 48,
            "init_iters": 5,
            "update_iters": 2,
            "batch_pos": 8,
            "batch_neg": 16,
            "mem_pos_per_frame": 4,
            "mem_neg_per_frame": 12
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn write_spec(dir: &Path) -> PathBuf {
    let spec = serde_json::json!({
        "name": "mini",
        "length": 7,
        "width": 200,
        "height": 150,
        "seed": 5,
        "target_w": 28,
        "target_h": 28,
        "start_x": 80.0,
        "start_y": 60.0,
        "vel_x": 1.0,
        "vel_y": 0.5,
        "sway_amp": 1.0,
        "sway_period": 17.0,
        "size_amplitude": 0.0,
        "camera_events": [{"frame": 3, "dx": -20, "dy": 0}],
        "illumination": [],
        "crossover": []
    });
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn dmcnet");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn seeded_track_runs_are_byte_identical_and_eval_is_exact() {
    let dir = workdir("pipeline");
    let config = write_micro_config(&dir);
    let spec = write_spec(&dir);
    let data = dir.join("data");
    run_ok(bin().args([
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    assert!(data.join("mini/visible/00000.png").exists());
    assert!(data.join("manifest.json").exists());

    let model = dir.join("model.ckpt");
    run_ok(bin().args([
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "3",
    ]));
    assert!(model.exists());
    assert!(dir.join("model.ckpt.json").exists());
    assert!(dir.join("model.ckpt.log.csv").exists());

    // Two identical seeded runs -> byte-identical result files.
    let gates = dir.join("gates");
    for out in ["run_a", "run_b"] {
        let mut args = vec![
            "track".to_string(),
            "--model".into(),
            model.display().to_string(),
            "--seq".into(),
            data.join("mini").display().to_string(),
            "--out".into(),
            dir.join(out).display().to_string(),
            "--config".into(),
            config.display().to_string(),
            "--seed".into(),
            "11".into(),
        ];
        if out == "run_a" {
            args.push("--dump-gates".into());
            args.push(gates.display().to_string());
        }
        run_ok(bin().args(&args));
    }
    let a = std::fs::read(dir.join("run_a/mini.txt")).unwrap();
    let b = std::fs::read(dir.join("run_b/mini.txt")).unwrap();
    assert_eq!(a, b, "seeded runs differ");
    let am = std::fs::read(dir.join("run_a/mini_meta.csv")).unwrap();
    let bm = std::fs::read(dir.join("run_b/mini_meta.csv")).unwrap();
    assert_eq!(am, bm, "metadata sidecars differ");
    // Gate response dumps: 4 gates x 3 levels.
    let count = std::fs::read_dir(&gates).unwrap().count();
    assert_eq!(count, 12, "expected 12 gate-response maps");

    // Evaluating the run against the dataset works and stays in range.
    let out = run_ok(bin().args([
        "eval",
        "--results",
        dir.join("run_a").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
    ]));
    assert!(out.contains("PR="), "unexpected eval output: {out}");
    assert!(dir.join("run_a/report.csv").exists());
    assert!(dir.join("run_a/pr_curve.svg").exists());

    // Perfect-tracking fixture: ground truth as the prediction.
    let perfect = dir.join("perfect");
    std::fs::create_dir_all(&perfect).unwrap();
    std::fs::copy(data.join("mini/visible.txt"), perfect.join("mini.txt")).unwrap();
    let out = run_ok(bin().args([
        "eval",
        "--results",
        perfect.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--force",
    ]));
    assert!(
        out.contains("PR=1.000 SR=1.000"),
        "perfect fixture not exact: {out}"
    );

    // Without --force the unmanifested result set is refused.
    let status = bin()
        .args([
            "eval",
            "--results",
            perfect.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!status.status.success(), "mixed result set was accepted");

    // Ablation harness over the micro dataset: a second (plain) model,
    // the four-variant table, and the 7-point u sweep.
    let plain = dir.join("plain.ckpt");
    run_ok(bin().args([
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        plain.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "3",
        "--no-dmc",
    ]));
    let ablation = dir.join("ablation");
    let out = run_ok(bin().args([
        "ablate",
        "--dataset",
        data.to_str().unwrap(),
        "--model-dmc",
        model.to_str().unwrap(),
        "--model-plain",
        plain.to_str().unwrap(),
        "--out",
        ablation.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "11",
        "--u-sweep",
    ]));
    assert!(out.contains("full"), "ablation table missing: {out}");
    let table = std::fs::read_to_string(ablation.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "4 variants + header: {table}");
    let sweep = std::fs::read_to_string(ablation.join("u_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 8, "7 sweep rows + header: {sweep}");
    let us: Vec<&str> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(us, ["0.0", "5.0", "10.0", "15.0", "20.0", "25.0", "30.0"]);
    assert!(ablation.join("ablation.svg").exists());
    assert!(ablation.join("u_sweep.svg").exists());

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn exit_codes_match_the_contract() {
    // Unknown flag -> usage error, exit 2 (clap convention).
    let out = bin().args(["track", "--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing input -> one-line diagnostic, exit 1.
    let out = bin()
        .args([
            "eval",
            "--results",
            "/nonexistent/results",
            "--dataset",
            "/nonexistent/data",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("dmcnet: "), "diagnostic: {err}");
}
