use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn relnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = relnet(args);
    assert!(
        out.status.success(),
        "relnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    let cfg = serde_json::json!({
        "sizes": {"train": 8, "valid": 4, "test": 4},
        "model": {"edge_hidden": 6, "mlp_hidden": 8, "relation_dim": 2, "influence_dim": 4},
        "training": {"epochs": 3, "batch_size": 4, "m": 2, "encoder_window": 5, "decoder_horizon": 3, "val_horizon": 3},
        "eval": {"horizon": 10},
        "analysis": {"k_range": [2, 3]}
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["generate", "--combo", "a", "--profile", "desk", "--seed", "7", "--out", s(&a)]);
    ok(&["generate", "--combo", "a", "--profile", "desk", "--seed", "7", "--out", s(&b)]);
    let fa = dir_bytes(&a);
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["manifest.json", "train_states.bin", "valid_states.bin", "test_labels.bin"] {
        assert!(names.contains(&f), "missing {f} in {names:?}");
    }
    let m = read(&a.join("manifest.json"));
    assert_eq!(m["sizes"]["train"], 500);
    assert_eq!(m["seed"], 7);
    // only the echoed output path differs
    let fb = dir_bytes(&b);
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na != "generate.manifest.json" {
            assert!(ba == bb, "{na} differs between reruns");
        }
    }
    ok(&["generate", "--combo", "a", "--profile", "desk", "--seed", "7", "--out", s(&a)]);
    assert_eq!(dir_bytes(&a), fa);
}

#[test]
fn config_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    for args in [
        vec!["generate", "--combo", "z", "--out", s(&out)],
        vec!["generate", "--profile", "huge", "--out", s(&out)],
    ] {
        let r = relnet(&args);
        assert!(!r.status.success(), "{args:?} should fail");
        assert!(!r.stderr.is_empty());
    }
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"training": {"epochs": 0}}"#).unwrap();
    let r = relnet(&["generate", "--config", s(&bad), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("epochs"));
    let r = relnet(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(&out)]);
    assert!(!r.status.success());
}

#[test]
fn train_eval_analyze_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&["generate", "--config", s(&cfg), "--combo", "a", "--seed", "3", "--out", s(&data)]);
    ok(&["train", "--config", s(&cfg), "--seed", "3", "--data", s(&data), "--out", s(&run)]);

    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let lines: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (e, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], e);
        for k in ["lr", "val_mse"] {
            assert!(l[k].is_number());
        }
        for k in ["np", "kl", "sd", "centrality", "total"] {
            assert!(l["loss"][k].is_number());
        }
    }
    let manifest = read(&run.join("train.manifest.json"));
    assert_eq!(manifest["config"]["training"]["epochs"], 3);
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["training"]["seed"], 3);
    for f in ["best.json", "best.bin", "final.json", "state.json"] {
        assert!(run.join(f).exists(), "{f}");
    }

    ok(&["eval", "--run", s(&run), "--out", s(&run)]);
    let report = read(&run.join("eval_test.json"));
    let schema: Value = serde_json::from_str(include_str!("../schemas/eval_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(validator.is_valid(&report), "{report}");
    assert_eq!(report["mse_per_step"].as_array().unwrap().len(), 10);
    assert_eq!(report["observed_steps"], 49);
    let mut broken = report.clone();
    broken["mse"] = Value::from("low");
    assert!(!validator.is_valid(&broken));

    ok(&["analyze", "--run", s(&run), "--out", s(&run.join("analysis"))]);
    let an = run.join("analysis");
    let acc = read(&an.join("accuracy.json"));
    let a = acc["accuracy"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&a));
    assert_eq!(acc["n_test_edges"], 4 * 20);
    let sil = fs::read_to_string(an.join("silhouette.csv")).unwrap();
    assert_eq!(sil.lines().count(), 1 + 2);
    let scatter = fs::read_to_string(an.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 4 * 20);
    assert!(scatter.starts_with("trajectory,receiver,sender,pc1,pc2,label,label_name,cluster,centrality"));
    let cent = fs::read_to_string(an.join("centrality_by_type.csv")).unwrap();
    assert_eq!(cent.lines().count(), 1 + 2);

    // re-running analysis reproduces every file byte for byte
    let before = dir_bytes(&an);
    ok(&["analyze", "--run", s(&run), "--out", s(&an)]);
    assert_eq!(dir_bytes(&an), before);
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    let full = tmp.path().join("full");
    let split = tmp.path().join("split");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&full)]);
    let first = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&split), "--stop-after", "1"]);
    assert!(String::from_utf8_lossy(&first.stderr).contains("stopped after 1 epochs"));
    assert!(!split.join("final.json").exists());
    let second = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&split)]);
    assert!(String::from_utf8_lossy(&second.stderr).contains("resumed at epoch 1"));
    for f in ["final.bin", "best.bin", "state.bin", "metrics.jsonl"] {
        assert!(fs::read(full.join(f)).unwrap() == fs::read(split.join(f)).unwrap(), "{f} differs");
    }
    // a different configuration may not continue the run
    let r = relnet(&["train", "--config", s(&cfg), "--seed", "99", "--data", s(&data), "--out", s(&split)]);
    assert!(!r.status.success());
}

#[test]
fn ablation_and_noise_flags_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    let run = tmp.path().join("r");
    ok(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run),
        "--ablate", "rsdl", "--ablate", "rst", "--epsilon", "gaussian", "--epochs", "1",
    ]);
    let m = read(&run.join("train.manifest.json"));
    let t = &m["config"]["training"];
    assert_eq!(t["weights"]["sd"], 0.0);
    assert_eq!(t["weights"]["np"], 1.0);
    assert_eq!(t["random_sampling"], false);
    assert_eq!(t["noise"]["epsilon"]["mode"], "gaussian");
    assert_eq!(t["epochs"], 1);
    let r = relnet(&["train", "--data", s(&data), "--out", s(&run), "--ablate", "nope"]);
    assert!(!r.status.success());
}
