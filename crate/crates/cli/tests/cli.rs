use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn volnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volnas"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn inspect_space_heart_patches() {
    let v = json(&volnas(&["inspect-space", "--stats", "110,320,320", "--min", "90,320,320"]));
    let hw: Vec<u64> = v["patch_hw"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(hw, [320, 304, 288, 272, 256]);
    assert_eq!(v["decisions"].as_array().unwrap().len(), 17);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(volnas(&["search"]).status.code(), Some(1));
    assert_eq!(volnas(&["inspect-space"]).status.code(), Some(1));
    assert_eq!(volnas(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = volnas(&["--data", missing.to_str().unwrap(), "inspect-space"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for p in [&a, &b] {
        let v = json(&volnas(&["--seed", "7", "--out", p.to_str().unwrap(), "synth", "--cases", "3", "--depth", "6,8", "--hw", "12,14"]));
        assert_eq!(v["cases"], 3);
    }
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn search_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");
    json(&volnas(&["--seed", "3", "--out", data.to_str().unwrap(), "synth", "--cases", "6", "--depth", "8,10", "--hw", "16,18"]));
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"rollouts_per_episode": 3, "child_epochs_per_episode": 1, "base_channels": 2}"#,
    )
    .unwrap();
    let base = ["--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", runs.to_str().unwrap()];

    let mut args = base.to_vec();
    args.extend(["search", "--episodes", "2"]);
    let result = json(&volnas(&args));
    assert_eq!(result["episodes"], 2);
    let jsonl = fs::read_to_string(runs.join("episodes.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    let csv = fs::read_to_string(runs.join("episodes.csv")).unwrap();
    assert!(csv.starts_with("episode,mean_reward,max_reward,entropy"));

    let ckpt = runs.join("checkpoint.bin");
    let e = json(&volnas(&["eval", "--checkpoint", ckpt.to_str().unwrap()]));
    let dice = e["dice"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&dice));

    // Resuming extends the same run.
    let mut args = base.to_vec();
    args.extend(["search", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"]);
    assert_eq!(json(&volnas(&args))["episodes"], 3);

    let case = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap();
    let pred = dir.path().join("pred");
    let v = json(&volnas(&[
        "--out",
        pred.to_str().unwrap(),
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--case",
        case.to_str().unwrap(),
    ]));
    assert!(v["foreground_voxels"].as_u64().is_some());
    assert!(pred.join("meta.json").exists());
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(volnas(&["eval", "--checkpoint", bad.to_str().unwrap()]).status.code(), Some(2));
}
