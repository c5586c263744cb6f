use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tmson(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmson")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Generates a small dataset and trains a checkpoint; returns (dir, data dir, checkpoint).
fn fixture() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"synth":{"n_train":96,"n_val":32,"n_test":40,"bayes_draws":500},"train":{"max_epochs":4}}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let out = tmson(&["gen-data", "--config", s(&cfg), "--out", s(&data), "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("m.tmsn");
    let out = tmson(&[
        "train",
        "--train",
        s(&data.join("train.jsonl")),
        "--val",
        s(&data.join("val.jsonl")),
        "--config",
        s(&cfg),
        "--epochs",
        "2",
        "--out",
        s(&ckpt),
        "--seed",
        "9",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (dir, data, ckpt)
}

#[test]
fn gradcheck_exits_zero() {
    let out = tmson(&["gradcheck", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["fused", "unimodal", "reconstruction", "kl", "ordinal", "total"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&tmson(&[])), 2);
    assert_eq!(code(&tmson(&["fit"])), 2);
    assert_eq!(code(&tmson(&["gradcheck", "--seed", "x"])), 2);
    assert_eq!(code(&tmson(&["sweep", "--model", "m", "--data", "d", "--out", "o"])), 2);
    assert_eq!(code(&tmson(&["eval", "--model", "m", "--data", "d", "--scheme", "acc9"])), 2);
    let out = tmson(&["eval", "--model", "m"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    assert_eq!(code(&tmson(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.tmsn");
    let out = tmson(&["eval", "--model", s(&missing), "--data", s(&missing)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"d_t\":1,\"d_v\":1,\"d_a\":1,\"label_range\":[-3,3]}\n{\"id\":\"x\"\n").unwrap();
    let out = tmson(&["train", "--train", s(&bad), "--val", s(&bad), "--out", s(&dir.path().join("m"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train":{"batch_size":0}}"#).unwrap();
    assert_eq!(code(&tmson(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())])), 1);
}

#[test]
fn pipeline_outputs() {
    let (dir, data, ckpt) = fixture();
    let test = data.join("test.jsonl");

    // flags override the file: two epochs instead of four
    let history: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.tmsn.history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);

    let report = dir.path().join("r.json");
    let out = tmson(&["eval", "--model", s(&ckpt), "--data", s(&test), "--scheme", "mosi-acc7,mosi-acc2-pos", "--report", s(&report)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mosi-acc7"));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n"], 40);
    assert_eq!(r["classification"].as_array().unwrap().len(), 2);
    assert_eq!(r["config"]["train"]["seed"], 9);
    assert_eq!(r["config"]["train"]["max_epochs"], 2);
    assert_eq!(r["config"]["model"]["d_t"], 32);
    let acc = r["classification"][0]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let out = tmson(&["predict", "--model", s(&ckpt), "--data", s(&test), "--with-uncertainty"]);
    assert_eq!(code(&out), 0);
    let lines: Vec<Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 40);
    for key in ["id", "y_hat", "y_hat_t", "y_hat_v", "y_hat_a", "u_t", "u_v", "u_a", "u_f"] {
        assert!(lines[0].get(key).is_some(), "missing {key}");
    }
    let u: Vec<f64> = lines.iter().flat_map(|l| ["u_t", "u_v", "u_a", "u_f"].map(|k| l[k].as_f64().unwrap())).collect();
    assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(u.contains(&0.0) && u.contains(&1.0));
    let out = tmson(&["predict", "--model", s(&ckpt), "--data", s(&test)]);
    let first: Value = serde_json::from_str(String::from_utf8(out.stdout).unwrap().lines().next().unwrap()).unwrap();
    assert!(first.get("u_f").is_none());

    let csv = dir.path().join("s.csv");
    let out = tmson(&[
        "sweep", "--model", s(&ckpt), "--data", s(&test), "--noise", "0,1,2,3", "--missing", "0,0.1,0.2,0.3,0.5",
        "--seeds", "0,1", "--scheme", "mosi-acc7,mosi-acc2-pos", "--out", s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(&rows[0][0], "noise");
    assert_eq!(&rows[8][0], "missing");
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    // the unperturbed row reproduces plain evaluation exactly
    let mae: f64 = rows[0][col("mae")].parse().unwrap();
    assert_eq!(mae, r["regression"]["mae"].as_f64().unwrap());
    let acc7: f64 = rows[0][col("mosi-acc7_acc")].parse().unwrap();
    assert_eq!(acc7, acc);
}

#[test]
fn ablation_writes_seven_rows() {
    let (dir, data, _) = fixture();
    let out_path = dir.path().join("ablation.csv");
    let out = tmson(&[
        "ablation",
        "--train",
        s(&data.join("train.jsonl")),
        "--val",
        s(&data.join("val.jsonl")),
        "--seeds",
        "0",
        "--epochs",
        "1",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(table.lines().count(), 8);
    assert!(table.lines().nth(1).unwrap().starts_with("L_f,"));
    assert!(table.lines().last().unwrap().starts_with("all,"));
}
