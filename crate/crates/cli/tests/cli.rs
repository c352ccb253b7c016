use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use moore_core::linalg::io::save_matrix;
use moore_core::moore::{load_layer, weighted_expert_sum};
use moore_core::Matrix;
use serde_json::Value;

fn moore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moore"))
        .args(args)
        .env_remove("MOORE_LOG")
        .output()
        .expect("spawn moore")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

/// The single JSON line on stderr.
fn stderr_error(o: &Output) -> Value {
    let s = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {s}");
    serde_json::from_str(lines[0]).unwrap()
}

const SMALL: &str = r#"{
  "suite_a": {"d_in": 6, "n_train": 32, "n_test": 16},
  "suite_b": {"d_in": 6, "n_train": 32, "n_test": 16},
  "d_h": 12,
  "adapter": {"kind": "moore", "d_t": 2, "d_s": 2, "l": 2},
  "pretrain": {"epochs": 2},
  "adapt": {"epochs": 2}
}"#;

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.json");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

fn train_small(dir: &Path, name: &str, extra: &[&str]) -> String {
    let cfg = small_config(dir);
    let out = dir.join(name).to_string_lossy().into_owned();
    let mut args = vec!["--config", &cfg, "--out", &out];
    args.extend_from_slice(extra);
    args.push("train");
    stdout_json(&moore(&args));
    out
}

#[test]
fn paramcount_full_size_dims() {
    let o = moore(&["paramcount", "--D", "4096", "--K", "9", "--dt", "128", "--ds", "64", "--L", "8"]);
    let v = stdout_json(&o);
    assert_eq!(v["router"], 1_049_728);
    assert_eq!(v["experts"], 32_768);
    assert_eq!(v["materialized"]["router"], 1_049_728);
    assert_eq!(v["materialized"]["experts"], 32_768);
}

#[test]
fn paramcount_baseline() {
    let v = stdout_json(&moore(&["--adapter", "LoRA", "--r", "8", "paramcount", "--D", "16", "--K", "3"]));
    assert_eq!(v["adapter"], "LoRA");
    assert_eq!(v["total"], 2 * 8 * 16);
    assert_eq!(v["total"], v["materialized"]["router"].as_u64().unwrap() + v["materialized"]["experts"].as_u64().unwrap());
}

#[test]
fn moeize_identity_has_unit_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let inp = dir.path().join("eye.mat");
    save_matrix(&inp, &Matrix::identity(4)).unwrap();
    let out = dir.path().join("eye.lyr");
    let v = stdout_json(&moore(&["--L", "2", "moeize", inp.to_str().unwrap(), out.to_str().unwrap()]));
    for s in v["sigma"].as_array().unwrap() {
        assert!((s.as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(load_layer(&out).unwrap().factors().sigma.len(), 4);
}

#[test]
fn moeize_rank_deficient_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let inp = dir.path().join("r1.mat");
    save_matrix(&inp, &Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]])).unwrap();
    let o = moore(&["moeize", inp.to_str().unwrap(), dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_error(&o)["error"], "RankDeficient");
}

#[test]
fn moeize_merge_reconstructs_input() {
    let dir = tempfile::tempdir().unwrap();
    let w = Matrix::from_rows(&[&[2.0, -1.0, 0.5], &[0.3, 1.5, -0.7], &[1.0, 0.2, 2.2], &[-0.4, 0.9, 0.1]]);
    let inp = dir.path().join("w.mat");
    save_matrix(&inp, &w).unwrap();
    let lyr = dir.path().join("w.lyr");
    let merged = dir.path().join("w.merged");
    stdout_json(&moore(&["--L", "4", "moeize", inp.to_str().unwrap(), lyr.to_str().unwrap()]));
    stdout_json(&moore(&["merge", lyr.to_str().unwrap(), merged.to_str().unwrap()]));
    let m = load_layer(&merged).unwrap();
    assert_eq!(m.dims().l, 0);
    let dense = weighted_expert_sum(&m).unwrap();
    for (a, b) in dense.data().iter().zip(w.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn odd_chain_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let inp = dir.path().join("eye.mat");
    save_matrix(&inp, &Matrix::identity(3)).unwrap();
    let o = moore(&["--L", "3", "moeize", inp.to_str().unwrap(), dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"], "OddL");
}

#[test]
fn missing_input_is_io_error() {
    let o = moore(&["moeize", "/nonexistent/w.mat", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"], "IoError");
}

#[test]
fn garbage_matrix_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let inp = dir.path().join("junk.mat");
    fs::write(&inp, b"not a matrix at all").unwrap();
    let o = moore(&["moeize", inp.to_str().unwrap(), dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"], "FormatError");
}

#[test]
fn unknown_flag_and_help() {
    let o = moore(&["--frobnicate", "gradcheck"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"], "UsageError");
    let h = moore(&["--help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&h.stdout).contains("paramcount"));
    assert_eq!(moore(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"pretrain": {"epochs": 1, "momentum": 0.9}}"#).unwrap();
    let o = moore(&["--config", p.to_str().unwrap(), "config"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"], "InvalidSpec");
}

#[test]
fn config_overlay_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let v = stdout_json(&moore(&["--config", &cfg, "--seed", "9", "--dt", "3", "config"]));
    assert_eq!(v["seed"], 9);
    assert_eq!(v["suite_a"]["d_in"], 6);
    assert_eq!(v["suite_a"]["c"], 4);
    assert_eq!(v["adapter"]["d_t"], 3);
    assert_eq!(v["adapter"]["l"], 2);
}

#[test]
fn train_without_out_is_usage_error() {
    let o = moore(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"], "UsageError");
}

#[test]
fn gradcheck_default_grid_exits_0() {
    let o = moore(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().count() > 30);
    assert!(!table.contains("FAIL"));
}

#[test]
fn train_is_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "a", &["--seed", "5"]);
    let b = train_small(dir.path(), "b", &["--seed", "5"]);
    for f in ["metrics.jsonl", "layer1.moorelyr", "w1.mat", "w2.mat"] {
        assert_eq!(fs::read(Path::new(&a).join(f)).unwrap(), fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_merged_matches_unmerged() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "run", &[]);
    let lyr = Path::new(&run).join("layer1.moorelyr");
    let merged = dir.path().join("merged.lyr");
    stdout_json(&moore(&["merge", lyr.to_str().unwrap(), merged.to_str().unwrap()]));
    let plain = stdout_json(&moore(&["eval", &run]));
    let folded = stdout_json(&moore(&["eval", &run, "--layer", merged.to_str().unwrap()]));
    let (pa, fa) = (plain["accuracy"].as_array().unwrap(), folded["accuracy"].as_array().unwrap());
    assert_eq!(pa.len(), 6);
    for (p, f) in pa.iter().zip(fa) {
        assert!((p["accuracy"].as_f64().unwrap() - f["accuracy"].as_f64().unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn analyze_commands_on_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "run", &[]);
    let out = dir.path().join("an");
    let r = stdout_json(&moore(&["--out", out.to_str().unwrap(), "analyze", "routing", &run]));
    assert_eq!(r["tasks"].as_array().unwrap().len(), 3);
    assert!(out.join("correlation.csv").exists());
    assert!(out.join("profile_B0.csv").exists());
    let ob = stdout_json(&moore(&["analyze", "oblivion", &run]));
    assert_eq!(ob["tasks"].as_array().unwrap().len(), 3);
    let c = stdout_json(&moore(&["analyze", "conflict", &run]));
    assert_eq!(c["curves"]["MoORE"][0][0], 3);
}

#[test]
fn routing_analysis_needs_moore() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "lora", &["--adapter", "LoRA", "--r", "2"]);
    let o = moore(&["analyze", "routing", &run]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"], "InvalidSpec");
}

#[test]
fn log_level_never_changes_stdout() {
    let base = moore(&["paramcount", "--D", "8", "--K", "2"]);
    let loud = Command::new(env!("CARGO_BIN_EXE_moore"))
        .args(["paramcount", "--D", "8", "--K", "2"])
        .env("MOORE_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(base.stdout, loud.stdout);
}
