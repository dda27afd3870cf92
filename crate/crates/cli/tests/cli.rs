use std::path::Path;
use std::process::{Command, Output};

fn synthcap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthcap"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .env("NO_COLOR", "1")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = synthcap(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Toy world in `dir/toy` plus its dataset directory in `dir/toy/data`.
fn toy(dir: &Path) {
    ok(dir, &["--seed", "7", "toy", "--out", "toy"]);
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"novel_classes": ["zebra"], "k": 60, "pipeline": {"rounds": 1, "scorer": {"tag_weight": 0.5}}}"#,
    )
    .unwrap();
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthcap(dir.path(), &["eval", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--frobnicate") && err.contains("Usage"), "{err}");

    let out = synthcap(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let out = synthcap(dir.path(), &["decode", "--data", "d"]);
    assert_eq!(out.status.code(), Some(2));
    let out = synthcap(dir.path(), &["--jobs", "0", "rewrite", "--candidate", "cow", "--to", "zebra", "a cow"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"kk": 1}"#).unwrap();
    let out = synthcap(dir.path(), &["--config", "cfg.json", "rewrite", "--candidate", "cow", "--to", "zebra", "a cow"]);
    assert_eq!(out.status.code(), Some(1), "unparsable file is a runtime error");
    std::fs::write(dir.path().join("cfg.json"), r#"{"m": 0}"#).unwrap();
    let out = synthcap(dir.path(), &["--config", "cfg.json", "split", "--instances", "i", "--captions", "c", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthcap(dir.path(), &["eval", "--pred", "missing.jsonl", "--refs", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}

#[test]
fn rewrite_prints_rewritten_captions() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["rewrite", "--candidate", "cow", "--to", "zebra", "two brown cows standing in a field"],
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout), "two zebras standing in a field\n");
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    let plan = |extra: &[&str]| -> serde_json::Value {
        let mut args = vec!["--config", "cfg.json"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&[
            "synth", "--data", "toy/data", "--candidates", "toy/candidates.json", "--image-root", "toy", "--dry-run",
        ]);
        serde_json::from_slice(&ok(d, &args).stdout).unwrap()
    };
    assert_eq!(plan(&[])["k"], 60);
    assert_eq!(plan(&[])["m"], 3);
    let mut args = vec!["--config", "cfg.json", "synth"];
    args.extend_from_slice(&["--data", "toy/data", "--candidates", "toy/candidates.json", "--image-root", "toy", "--dry-run", "--k", "30"]);
    let v: serde_json::Value = serde_json::from_slice(&ok(d, &args).stdout).unwrap();
    assert_eq!(v["k"], 30);
    assert_eq!(v["per_pair_quota"], 10);
    // Dry runs write nothing.
    assert!(!d.join("synth_out").exists());
}

#[test]
fn outputs_are_byte_identical_across_reruns_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    for (jobs, out) in [("1", "s1"), ("4", "s2")] {
        ok(d, &[
            "--config", "cfg.json", "--jobs", jobs, "synth", "--data", "toy/data", "--candidates",
            "toy/candidates.json", "--image-root", "toy", "--out", out,
        ]);
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("s1/manifest.jsonl"), read("s2/manifest.jsonl"));
    assert_eq!(read("s1/plan.json"), read("s2/plan.json"));
    let manifest = String::from_utf8(read("s1/manifest.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let img = first["image_path"].as_str().unwrap();
    assert_eq!(read(&format!("s1/{img}")), read(&format!("s2/{img}")));

    ok(d, &[
        "--config", "cfg.json", "train", "--data", "toy/data", "--synth", "s1/manifest.jsonl", "--labels",
        "toy/detections.jsonl", "--out", "run",
    ]);
    for (jobs, suffix) in [("1", "a"), ("3", "b")] {
        ok(d, &[
            "--config", "cfg.json", "--jobs", jobs, "decode", "--model", "run/step2/model.json", "--data",
            "toy/data", "--subset", "test", "--out", &format!("dec_{suffix}.jsonl"),
        ]);
        ok(d, &[
            "--config", "cfg.json", "--jobs", jobs, "decode", "--model", "run/step2/model.json", "--data",
            "toy/data", "--subset", "partial", "--labels", "toy/detections.jsonl", "--out",
            &format!("cbs_{suffix}.jsonl"),
        ]);
        ok(d, &[
            "--config", "cfg.json", "--jobs", jobs, "pseudolabel", "--model", "run/step2/model.json", "--data",
            "toy/data", "--labels", "toy/detections.jsonl", "--out", &format!("pl_{suffix}.jsonl"),
        ]);
    }
    assert_eq!(read("dec_a.jsonl"), read("dec_b.jsonl"));
    assert_eq!(read("cbs_a.jsonl"), read("cbs_b.jsonl"));
    assert_eq!(read("pl_a.jsonl"), read("pl_b.jsonl"));
    let partial = std::fs::read_to_string(d.join("toy/data/split.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"partial\""))
        .count();
    let labels = String::from_utf8(read("pl_a.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 2 * partial);

    let out = ok(d, &["--config", "cfg.json", "eval", "--pred", "dec_a.jsonl", "--refs", "toy/data/captions.jsonl", "--betas", "1,1.5", "--out", "report.json"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("COF1 COF1.5"), "{table}");
    let report: serde_json::Value = serde_json::from_slice(&read("report.json")).unwrap();
    assert!(report["cof"]["1"].is_number() && report["cof"]["1.5"].is_number());
}

#[test]
fn failed_synth_removes_its_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    // Rasters cannot be found under the wrong image root.
    let out = synthcap(d, &[
        "--config", "cfg.json", "synth", "--data", "toy/data", "--candidates", "toy/candidates.json",
        "--image-root", "nowhere", "--out", "s",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("s").exists());
}

#[test]
fn split_matches_the_toy_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy(d);
    ok(d, &[
        "--novel", "zebra", "split", "--instances", "toy/instances.json", "--captions", "toy/captions.json",
        "--val-ids", "toy/val_ids.txt", "--test-ids", "toy/test_ids.txt", "--out", "data",
    ]);
    for f in ["split.jsonl", "images.jsonl"] {
        assert_eq!(
            std::fs::read(d.join("data").join(f)).unwrap(),
            std::fs::read(d.join("toy/data").join(f)).unwrap(),
            "{f}"
        );
    }
    let out = synthcap(d, &[
        "split", "--instances", "toy/instances.json", "--instances", "toy/instances.json", "--captions",
        "toy/captions.json", "--out", "data2",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
