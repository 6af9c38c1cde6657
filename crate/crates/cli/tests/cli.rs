//! Drives the `samcnet` binary end to end on small corpora.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_samcnet"));
    c.env_remove("SAMCNET_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err}");
    assert!(err.starts_with("error: "));
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, per_class: usize, points: usize, seed: u64) -> PathBuf {
    let spec = serde_json::json!({
        "categories": 4,
        "points_per_pattern": points,
        "patterns_per_class": per_class,
        "arena": 1000.0,
        "classes": [
            {"name": "planted", "relationships": [{"categories": ["A", "B"], "radius": 30.0, "participation": 0.9}]},
            {"name": "random"}
        ],
        "seed": seed
    });
    let path = dir.join(format!("spec{seed}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

fn tiny_model() -> Value {
    serde_json::json!({"widths": [8, 8], "emb_dims": 16, "head_widths": [16], "k": 4,
                       "lrfc": {"scales": 2, "lambda_min": 1.0, "lambda_max": 100.0}})
}

fn write_run(dir: &Path, name: &str, data: &Path, epochs: usize, split: bool) -> PathBuf {
    let cfg = serde_json::json!({
        "data": {"dir": s(data), "split": split},
        "model": tiny_model(),
        "train": {"epochs": epochs, "batch_size": 4, "lr": 3e-3, "num_points": 64, "augment": false, "seed": 3},
        "output": {"dir": name}
    });
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("per_sample_seconds");
    v
}

const METRIC_KEYS: [&str; 6] = ["accuracy", "confusion", "f1", "per_sample_seconds", "precision", "recall"];

fn keys(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

#[test]
fn generate_is_deterministic_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 3, 40, 1);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["generate", "--spec", s(&spec), "--out", s(&a)]);
    ok(&["generate", "--spec", s(&spec), "--out", s(&b)]);
    ok(&["generate", "--spec", s(&spec), "--out", s(&c), "--seed", "9"]);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "points.csv"), read(&b, "points.csv"));
    assert_eq!(read(&a, "labels.csv"), read(&b, "labels.csv"));
    assert_ne!(read(&a, "points.csv"), read(&c, "points.csv"));
    assert_eq!(read_json(&c.join("spec.json"))["seed"], 9);
    let data = samcnet_cli::config::load_dir(&a).unwrap();
    assert_eq!(data.len(), 6);

    // The environment override applies when no flag is given.
    let d = dir.path().join("d");
    let out = bin()
        .args(["generate", "--spec", s(&spec), "--out", s(&d)])
        .env("SAMCNET_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(&c, "points.csv"), read(&d, "points.csv"));
}

#[test]
fn invalid_inputs_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"categories": 2, "bogus": 1}"#).unwrap();
    fails(&["generate", "--spec", s(&bad), "--out", s(&dir.path().join("o"))]);
    fails(&["generate", "--spec", s(&dir.path().join("missing.json")), "--out", "o"]);
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"data": {"dir": "d"}, "output": {"dir": "o"}, "model": {"k": 0}}"#).unwrap();
    fails(&["train", "--config", s(&cfg)]);
    fails(&["eval", "--checkpoint", s(&dir.path().join("none.ckpt")), "--data", s(dir.path())]);
    fails(&["baseline", "--measure", "ripley", "--classifier", "dt", "--data", s(dir.path())]);
}

#[test]
fn train_then_eval_memorizes_a_toy_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 4, 64, 2);
    let data = dir.path().join("toy");
    ok(&["generate", "--spec", s(&spec), "--out", s(&data)]);
    let cfg = write_run(dir.path(), "toyrun", &data, 60, false);
    ok(&["train", "--config", s(&cfg)]);
    let out = dir.path().join("toyrun");
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_accuracy\n"));
    assert_eq!(history.lines().count(), 61);

    let ckpt = out.join("model.ckpt");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    let first = read_json(&out.join("metrics.json"));
    assert_eq!(keys(&first), METRIC_KEYS);
    assert_eq!(first["accuracy"], 1.0);
    assert!(first["per_sample_seconds"].as_f64().unwrap() > 0.0);
    let again = dir.path().join("again");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&again)]);
    assert_eq!(without_timing(read_json(&again.join("metrics.json"))), without_timing(first));
}

#[test]
fn training_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 10, 48, 3);
    let data = dir.path().join("data");
    ok(&["generate", "--spec", s(&spec), "--out", s(&data)]);
    for name in ["r1", "r2"] {
        let cfg = write_run(dir.path(), name, &data, 2, true);
        ok(&["train", "--config", s(&cfg)]);
        let ck = dir.path().join(name).join("model.ckpt");
        ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--split", "test"]);
    }
    let read = |n: &str, f: &str| std::fs::read(dir.path().join(n).join(f)).unwrap();
    assert_eq!(read("r1", "history.csv"), read("r2", "history.csv"));
    assert_eq!(read("r1", "model.ckpt"), read("r2", "model.ckpt"));
    let m = |n: &str| without_timing(read_json(&dir.path().join(n).join("metrics.json")));
    assert_eq!(m("r1"), m("r2"));

    // A different seed from the environment reaches the run.
    let cfg = write_run(dir.path(), "r3", &data, 2, true);
    let out = bin().args(["train", "--config", s(&cfg)]).env("SAMCNET_SEED", "11").output().unwrap();
    assert!(out.status.success());
    assert_ne!(read("r1", "model.ckpt"), read("r3", "model.ckpt"));
}

#[test]
fn every_baseline_combination_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 20, 200, 4);
    let data = dir.path().join("data");
    ok(&["generate", "--spec", s(&spec), "--out", s(&data)]);
    for measure in ["pi", "crossk"] {
        for clf in ["dt", "rf", "nn"] {
            let out = dir.path().join(format!("{measure}_{clf}"));
            let args = [
                "baseline", "--measure", measure, "--classifier", clf, "--data", s(&data), "--hidden", "32", "--out",
                s(&out),
            ];
            ok(&args);
            let m = read_json(&out.join("metrics.json"));
            assert_eq!(keys(&m), METRIC_KEYS);
            if measure == "pi" && clf == "dt" {
                assert!(m["accuracy"].as_f64().unwrap() > 0.6, "{m}");
            }
            let again = dir.path().join(format!("{measure}_{clf}_again"));
            let mut args2 = args;
            args2[args2.len() - 1] = s(&again);
            ok(&args2);
            assert_eq!(without_timing(read_json(&again.join("metrics.json"))), without_timing(m));
        }
    }
}

#[test]
fn ablation_interpretation_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), 10, 48, 5);
    let data = dir.path().join("data");
    ok(&["generate", "--spec", s(&spec), "--out", s(&data)]);
    let cfg = write_run(dir.path(), "abl", &data, 1, true);
    ok(&["ablate", "--config", s(&cfg)]);
    let table = std::fs::read_to_string(dir.path().join("abl").join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,precision,recall,f1,accuracy");
    assert_eq!(lines.len(), 8);
    assert!(lines[7].starts_with("Entire model,"));
    for row in &lines[1..] {
        for v in row.split(',').skip(1) {
            assert!((0.0..=1.0).contains(&v.parse::<f64>().unwrap()), "{row}");
        }
    }

    // The last ablation row is exactly the configured model.
    let run = samcnet_cli::RunConfig::load(&cfg).unwrap();
    let rows = samcnet_cli::ablate_config(&run, &mut |_| {}).unwrap();
    assert_eq!(rows[6].model, run.model);

    let train_cfg = write_run(dir.path(), "model", &data, 1, true);
    ok(&["train", "--config", s(&train_cfg)]);
    let ckpt = dir.path().join("model").join("model.ckpt");
    let read_outputs = |o: &Path| {
        ok(&["interpret", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(o)]);
        (
            std::fs::read_to_string(o.join("pair_importance.csv")).unwrap(),
            std::fs::read_to_string(o.join("relationships.csv")).unwrap(),
        )
    };
    let (pairs, rel) = read_outputs(&dir.path().join("i1"));
    assert!(pairs.starts_with("layer,cat_a,cat_b,importance\n"));
    assert_eq!(pairs.lines().count(), 1 + 2 * 16);
    for line in pairs.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(rel.starts_with("rank,center,neighbors,accuracy_drop\n"));
    assert!(rel.lines().count() > 1 && rel.lines().count() <= 21);
    assert_eq!(read_outputs(&dir.path().join("i2")), (pairs, rel));

    let bench = |n: &str| {
        let o = dir.path().join(format!("b{n}"));
        ok(&["bench", "--checkpoint", s(&ckpt), "--data", s(&data), "--num-points", n, "--limit", "5", "--out", s(&o)]);
        read_json(&o.join("bench.json"))
    };
    let (a, b) = (bench("48"), bench("48"));
    assert_eq!(a["samples"], 5);
    let (ta, tb) = (a["mean_seconds"].as_f64().unwrap(), b["mean_seconds"].as_f64().unwrap());
    assert!(ta > 0.0 && tb > 0.0);
    assert!(ta / tb < 3.0 && tb / ta < 3.0, "{ta} vs {tb}");
}
