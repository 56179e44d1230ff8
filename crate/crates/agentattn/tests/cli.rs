use std::process::Command;

use agentattn::cli::run;

fn code(args: &[&str]) -> i32 {
    run(std::iter::once("agentattn").chain(args.iter().copied()))
}

fn binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_agentattn")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn verify_passes_and_reports_json_lines() {
    let (c, out) = binary(&["verify", "--seed", "7", "--trials", "50"]);
    assert_eq!(c, 0);
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() > 20);
    assert!(lines.iter().all(|l| l["passed"] == true));
}

#[test]
fn injected_fault_fails_exactly_once_and_last() {
    for fault in ["rowsum", "oracle", "gradient"] {
        let (c, out) = binary(&["verify", "--inject", fault]);
        assert_eq!(c, 1, "{fault}");
        let passed: Vec<bool> = out.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["passed"] == true).collect();
        assert_eq!(passed.iter().filter(|p| !**p).count(), 1, "{fault}");
        assert!(!passed.last().unwrap());
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&["verify", "--trials", "0"]), 2);
    assert_eq!(code(&["verify", "--inject", "nonsense"]), 2);
    assert_eq!(code(&["verify", "--dtype", "f16"]), 2);
    assert_eq!(code(&["bench", "--Ns", "512,256"]), 2);
    assert_eq!(code(&["bench", "--Ns", "256,x"]), 2);
    assert_eq!(code(&["bench", "--Ns", "64", "--repeats", "4"]), 2);
    assert_eq!(code(&["bench", "--kernel", "flash"]), 2);
    assert_eq!(code(&["params", "--preset", "/nonexistent/preset.json"]), 2);
    assert_eq!(code(&["params", "--preset", "agent-swin-t.json"]), 2);
    assert_eq!(code(&["params"]), 2);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn bench_emits_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let summary = dir.path().join("s.json");
    let c = code(&[
        "bench", "--kernel", "agent", "--n", "49", "--d", "64", "--Ns", "256,512,1024",
        "--out", csv.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
    ]);
    assert_eq!(c, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kernel,N,n,d,dtype,wall_ns,mac_count");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("agent,256,49,64,f32,"));
    assert!(lines[3].ends_with(",12845056"));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s[0]["loglog_slope"].is_f64());
}

#[test]
fn bench_resource_error_keeps_partial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let c = code(&[
        "bench", "--kernel", "softmax", "--Ns", "16,32,100000000", "--d", "8",
        "--memory-budget", "100000", "--out", csv.to_str().unwrap(),
    ]);
    assert_eq!(c, 1);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn params_reports_counts_and_saves() {
    let (c, out) = binary(&["params", "--preset", "agent-deit-t.json"]);
    assert_eq!(c, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["params"]["total"], 5_971_792);
    assert_eq!(v["flops"]["flops"].as_u64().unwrap(), 2 * v["flops"]["macs"].as_u64().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let preset = dir.path().join("small.json");
    agentattn::presets::save_preset(&preset, &agentattn_core::verify::desk_preset()).unwrap();
    let save = dir.path().join("weights");
    let c = code(&["params", "--preset", preset.to_str().unwrap(), "--save", save.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(c, 0);
    let model = agentattn::params::load_model::<f32>(&save).unwrap();
    assert_eq!(model, agentattn_core::Model::build(&agentattn_core::verify::desk_preset(), 3).unwrap());
}

#[test]
fn verify_is_deterministic() {
    assert_eq!(binary(&["verify", "--seed", "11", "--trials", "5"]), binary(&["verify", "--seed", "11", "--trials", "5"]));
}
