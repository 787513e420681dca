use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn parc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parc"))
        .args(args)
        .env("PARC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn check_suites_pass() {
    let o = parc(&["check", "--suite", "oracle", "--trials", "200"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let o = parc(&["--json", "check", "--suite", "receptive"]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["passed"], true);
    assert_eq!(v["checks"].as_array().unwrap().len(), 2);
}

#[test]
fn flops_matches_library_counts() {
    let path = config("parcnet-xxs-desk.json");
    let o = parc(&["--json", "flops", "--config", arg(&path), "--input", "64x64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    let model = parcnet::model::build_model(parcnet::model::ModelConfig::load(&path).unwrap(), 0).unwrap();
    assert_eq!(v["params"], model.count_params());
    assert_eq!(v["macs"], model.count_flops([1, 3, 64, 64]).unwrap());
    let unit_macs: u64 = v["units"].as_array().unwrap().iter().map(|u| u["macs"].as_u64().unwrap()).sum();
    assert_eq!(v["macs"], unit_macs);
}

#[test]
fn bad_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "surprise": 1}"#).unwrap();
    let o = parc(&["flops", "--config", arg(&bad), "--input", "32x32"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));

    assert_eq!(parc(&["flops", "--config", arg(&bad), "--input", "32"]).status.code(), Some(2));
    assert_eq!(parc(&["bench", "--arm", "model", "--dims", "1x3x32x32"]).status.code(), Some(2));
    assert_eq!(parc(&["bench", "--arm", "fft", "--dims", "1x3x32x32"]).status.code(), Some(2));
    assert_eq!(parc(&["train", "--config", "c.json", "--out", "o", "--synth", "spiral:n=3"]).status.code(), Some(2));
}

#[test]
fn missing_file_is_a_failure() {
    let o = parc(&["eval", "--ckpt", "/nonexistent/x.ckpt", "--synth", "quadrant:n=4,size=16"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_csv_and_model_rows() {
    let o = parc(&["bench", "--arm", "concat", "--dims", "1x2x8x8", "--iters", "3", "--warmup", "1", "--csv"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], parcnet::bench::CSV_HEADER);
    assert!(lines[1].starts_with("concat,"));

    let cfg = config("circtestnet.json");
    let o = parc(&["--json", "bench", "--arm", "model", "--config", arg(&cfg), "--dims", "1x1x16x16", "--iters", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports = json(&o)["reports"].as_array().unwrap().clone();
    let names: Vec<&str> = reports.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["stem", "stage0", "head", "total"]);
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("quad");
    let ckpt = dir.path().join("net.ckpt");
    let log = dir.path().join("log.csv");
    let o = parc(&["synth", "--kind", "quadrant", "--n", "64", "--size", "16", "--seed", "3", "--out", arg(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("images.ptns").exists() && data.join("labels.ptns").exists());

    let cfg = config("circtestnet.json");
    let o = parc(&[
        "--json", "train", "--config", arg(&cfg), "--data", arg(&data), "--out", arg(&ckpt),
        "--epochs", "2", "--seed", "1", "--log", arg(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["steps"], 2);
    let rows = std::fs::read_to_string(&log).unwrap();
    assert_eq!(rows.lines().next(), Some("step,lr,loss,epoch"));
    assert_eq!(rows.lines().count(), 3);

    for extra in [&[][..], &["--ema"][..]] {
        let mut args = vec!["--json", "eval", "--ckpt", arg(&ckpt), "--data", arg(&data)];
        args.extend_from_slice(extra);
        let o = parc(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let acc = json(&o)["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn training_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("circtestnet.json");
    let mut bytes = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("{i}.ckpt"));
        let o = parc(&[
            "train", "--config", arg(&cfg), "--synth", "quadrant:n=32,size=16,seed=5", "--out", arg(&out),
            "--epochs", "1", "--seed", "9",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
