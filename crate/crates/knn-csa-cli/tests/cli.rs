//! End-to-end tests of the `knn-csa` binary: exit codes, determinism, and
//! output schemas.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_knn-csa")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("CSA_SEED")
        .output()
        .expect("spawn knn-csa")
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn adapt_labels_target_at_source_point() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.csv", "x0,y\n0.0,1.5\n10.0,2.5\n");
    write(dir.path(), "t.csv", "x0\n0.0\n");
    let out = run(
        &["adapt", "--source", "s.csv", "--target", "t.csv", "--k", "1", "--seed", "0", "--out", "out.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(text, "x0,y_pseudo\n0,1.5\n");
}

#[test]
fn adapt_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let synth = run(
        &["synth-mean", "--n", "200", "--m", "100", "--seed", "3", "--source-out", "s.csv", "--target-out", "t.csv"],
        dir.path(),
    );
    assert!(synth.status.success());
    let args = ["adapt", "--source", "s.csv", "--target", "t.csv", "--k", "logn", "--seed", "42", "--out", "a.csv"];
    assert!(run(&args, dir.path()).status.success());
    let first = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert!(run(&args, dir.path()).status.success());
    let second = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(first, second);
    assert!(!first.is_empty());
}

#[test]
fn adapt_k_exceeding_n_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.csv", "x0,y\n0.0,1.0\n1.0,2.0\n2.0,3.0\n");
    write(dir.path(), "t.csv", "x0\n0.5\n");
    let out = run(
        &["adapt", "--source", "s.csv", "--target", "t.csv", "--k", "5", "--seed", "0", "--out", "o.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn adapt_malformed_source_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.csv", "x0,y\nnope,1.0\n");
    write(dir.path(), "t.csv", "x0\n0.5\n");
    let out = run(
        &["adapt", "--source", "s.csv", "--target", "t.csv", "--k", "1", "--seed", "0", "--out", "o.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn estimate_schema_and_optional_bound() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["synth-mean", "--n", "500", "--m", "500", "--seed", "1", "--source-out", "s.csv", "--target-out", "t.csv"],
        dir.path(),
    )
    .status
    .success());
    let base = ["estimate", "--source", "s.csv", "--target", "t.csv", "--h", "mean-y", "--k", "1", "--seed", "0"];
    let json = stdout_json(&run(&base, dir.path()));
    for key in ["estimate", "empirical_variance", "n", "m", "k", "seconds"] {
        assert!(json.get(key).is_some(), "missing key {key}");
    }
    assert!(json.get("sampling_bound").is_none());
    assert_eq!(json["n"], 500);
    assert_eq!(json["m"], 500);
    assert_eq!(json["k"], 1);

    let mut with_bound = base.to_vec();
    with_bound.extend_from_slice(&["--delta", "0.05", "--u-h", "6.0"]);
    let json = stdout_json(&run(&with_bound, dir.path()));
    assert!(json["sampling_bound"].as_f64().unwrap() > 0.0);

    // Delta alone (no declared bound on h) leaves the certificate absent.
    let mut delta_only = base.to_vec();
    delta_only.extend_from_slice(&["--delta", "0.05"]);
    let json = stdout_json(&run(&delta_only, dir.path()));
    assert!(json.get("sampling_bound").is_none());
}

#[test]
fn estimate_mean_setup_near_half() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["synth-mean", "--n", "10000", "--m", "10000", "--seed", "0", "--source-out", "s.csv", "--target-out", "t.csv"],
        dir.path(),
    )
    .status
    .success());
    let json = stdout_json(&run(
        &["estimate", "--source", "s.csv", "--target", "t.csv", "--h", "mean-y", "--k", "1", "--seed", "0"],
        dir.path(),
    ));
    let estimate = json["estimate"].as_f64().unwrap();
    assert!((estimate - 0.5).abs() < 0.05, "estimate = {estimate}");
}

#[test]
fn estimate_unknown_h_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.csv", "x0,y\n0.0,1.0\n");
    write(dir.path(), "t.csv", "x0\n0.5\n");
    let out = run(
        &["estimate", "--source", "s.csv", "--target", "t.csv", "--h", "nope", "--k", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown h"));
}

#[test]
fn estimate_empty_target_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.csv", "x0,y\n0.0,1.0\n");
    write(dir.path(), "t.csv", "x0\n");
    let out = run(
        &["estimate", "--source", "s.csv", "--target", "t.csv", "--h", "mean-y", "--k", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.csv", "x0,y\n0.0,1.0\n1.0,3.0\n");
    write(dir.path(), "t.csv", "x0\n0.1\n");
    write(dir.path(), "cfg.json", r#"{"h": "mean-y", "k": "2", "seed": 9}"#);
    // Config alone: k = 2 averages both labels over draws.
    let json = stdout_json(&run(
        &["estimate", "--source", "s.csv", "--target", "t.csv", "--config", "cfg.json"],
        dir.path(),
    ));
    assert_eq!(json["k"], 2);
    // Explicit flag wins over the config value.
    let json = stdout_json(&run(
        &["estimate", "--source", "s.csv", "--target", "t.csv", "--config", "cfg.json", "--k", "1"],
        dir.path(),
    ));
    assert_eq!(json["k"], 1);
    assert_eq!(json["estimate"], 1.0);
}

#[test]
fn csa_seed_env_is_default_override() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["synth-mean", "--n", "100", "--m", "50", "--seed", "5", "--source-out", "s.csv", "--target-out", "t.csv"],
        dir.path(),
    )
    .status
    .success());
    let adapt = |seed_args: &[&str], env: Option<&str>, out_name: &str| {
        let mut args = vec!["adapt", "--source", "s.csv", "--target", "t.csv", "--k", "2", "--out", out_name];
        args.extend_from_slice(seed_args);
        let mut cmd = Command::new(bin());
        cmd.args(&args).current_dir(dir.path()).env_remove("CSA_SEED");
        if let Some(v) = env {
            cmd.env("CSA_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(dir.path().join(out_name)).unwrap()
    };
    let with_flag = adapt(&["--seed", "123"], None, "a.csv");
    let with_env = adapt(&[], Some("123"), "b.csv");
    let with_default = adapt(&[], None, "c.csv");
    let flag_beats_env = adapt(&["--seed", "123"], Some("999"), "d.csv");
    assert_eq!(with_flag, with_env);
    assert_eq!(with_flag, flag_beats_env);
    assert_ne!(with_flag, with_default);
}

#[test]
fn sweep_writes_outputs_with_slopes() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.json",
        r#"{
            "setup": "mean-estimation",
            "cells": [[50, 50], [100, 100], [200, 200]],
            "methods": [{"method": "csa", "k": 1}, {"method": "oracle-q"}],
            "replications": 3,
            "base_seed": 7,
            "out_csv": "records.csv",
            "out_json": "summary.json"
        }"#,
    );
    let out = run(&["sweep", "cfg.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert!(csv.starts_with("method,n,m,rep,error,seconds\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 3 * 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["slopes"].get("csa-k1").is_some());
    assert!(summary["slopes"].get("oracle-q").is_some());
}

#[test]
fn sweep_single_replication_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.json",
        r#"{"setup": "mean-estimation", "cells": [[50, 50]], "methods": [{"method": "csa", "k": 1}], "replications": 1, "base_seed": 0}"#,
    );
    let out = run(&["sweep", "cfg.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replications"));
}

#[test]
fn sweep_unknown_method_exits_1_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cfg.json",
        r#"{"setup": "mean-estimation", "cells": [[50, 50]], "methods": [{"method": "magic"}], "replications": 2, "base_seed": 0}"#,
    );
    let out = run(&["sweep", "cfg.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("method"));
}

#[test]
fn bounds_rejects_invalid_inputs_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // delta out of range
    write(
        dir.path(),
        "bad_delta.json",
        r#"{"u_h": 1.0, "sigma_h2": 0.1, "g_h_integral": 1.0, "c": 1.0, "b_x": 0.5, "u_x": 0.5, "d": 1, "delta": 1.5, "k": 1, "n": 100}"#,
    );
    let out = run(&["bounds", "bad_delta.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
    // k = n violates k <= n/2
    write(
        dir.path(),
        "bad_k.json",
        r#"{"u_h": 1.0, "sigma_h2": 0.1, "g_h_integral": 1.0, "c": 1.0, "b_x": 0.5, "u_x": 0.5, "d": 1, "delta": 0.05, "k": 100, "n": 100}"#,
    );
    let out = run(&["bounds", "bad_k.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    // b_x > u_x names the constraint
    write(
        dir.path(),
        "bad_b.json",
        r#"{"u_h": 1.0, "sigma_h2": 0.1, "g_h_integral": 1.0, "c": 1.0, "b_x": 0.7, "u_x": 0.5, "d": 1, "delta": 0.05, "k": 1, "n": 100}"#,
    );
    let out = run(&["bounds", "bad_b.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("b_x"));
}

#[test]
fn bias_sample_runs_and_validates_rule() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..200).map(|i| format!("{},0.0\n", i as f64 / 200.0)).collect();
    write(dir.path(), "d.csv", &format!("x0,y\n{rows}"));
    let out = run(
        &["bias-sample", "--input", "d.csv", "--rule", "linear-clip", "--column", "0", "--seed", "0", "--out", "s.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let kept = std::fs::read_to_string(dir.path().join("s.csv")).unwrap().lines().count() - 1;
    assert!(kept > 0 && kept < 200);
    let out = run(
        &["bias-sample", "--input", "d.csv", "--rule", "nope", "--column", "0", "--out", "s.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threads_flag_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["synth-mean", "--n", "300", "--m", "200", "--seed", "2", "--source-out", "s.csv", "--target-out", "t.csv"],
        dir.path(),
    )
    .status
    .success());
    for (threads, name) in [("1", "one.csv"), ("2", "two.csv"), ("4", "four.csv")] {
        let out = run(
            &["adapt", "--threads", threads, "--source", "s.csv", "--target", "t.csv", "--k", "3", "--seed", "8", "--out", name],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let one = std::fs::read(dir.path().join("one.csv")).unwrap();
    let two = std::fs::read(dir.path().join("two.csv")).unwrap();
    let four = std::fs::read(dir.path().join("four.csv")).unwrap();
    assert_eq!(one, two);
    assert_eq!(one, four);
}

#[test]
fn bench_reports_times_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let json = stdout_json(&run(
        &["bench", "--sizes", "200,400,800,1600", "--d", "2", "--k", "1", "--seed", "0", "--out", "times.csv"],
        dir.path(),
    ));
    assert_eq!(json["times"].as_array().unwrap().len(), 4);
    assert!(json["loglog_slope"].is_number());
    assert_eq!(json["doubling_ratios"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("times.csv")).unwrap();
    assert!(csv.starts_with("n,seconds\n"));
}
