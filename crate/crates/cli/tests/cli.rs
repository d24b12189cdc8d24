use std::path::Path;
use std::process::{Command, Output};

use dglm_cli::output::{manifest_without_runtime, Manifest, MANIFEST};

fn dglm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dglm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, scenario: &str, steps: &str) {
    let out = dglm(&["synth", "--scenario", scenario, "--steps", steps, "--seed", "9", "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_then_evaluate_writes_manifest_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "plain-poisson", "60");
    let run = d.join("run");
    let out = dglm(&[
        "evaluate",
        "--config",
        p(&d.join("config.toml")),
        "--data",
        p(&d.join("data.csv")),
        "--out",
        p(&run),
        "--threads",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(run.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(m.command, "evaluate");
    assert_eq!(m.runtime.threads, 2);
    for (name, hash) in &m.outputs {
        assert!(run.join(name).exists(), "{name}");
        assert_eq!(hash.len(), 64);
    }
    assert!(m.outputs.contains_key("quantiles.csv"));
    assert!(!m.summary.pit.is_empty());
}

#[test]
fn rerun_with_other_thread_count_reproduces_everything_but_runtime() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "retail-dcmm", "40");
    let mut manifests = Vec::new();
    for threads in ["1", "4"] {
        let run = d.join(format!("run{threads}"));
        let out = dglm(&[
            "forecast",
            "--config",
            p(&d.join("config.toml")),
            "--data",
            p(&d.join("data.csv")),
            "--out",
            p(&run),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        manifests.push(manifest_without_runtime(&std::fs::read_to_string(run.join(MANIFEST)).unwrap()).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "plain-poisson", "20");
    let cfg = std::fs::read_to_string(d.join("config.toml")).unwrap();
    std::fs::write(d.join("bad.toml"), cfg.replacen("schema_version = 1", "schema_version = 99", 1)).unwrap();
    let out = dglm(&[
        "filter",
        "--config",
        p(&d.join("bad.toml")),
        "--data",
        p(&d.join("data.csv")),
        "--out",
        p(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_data_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "plain-poisson", "20");
    std::fs::write(d.join("bad.csv"), "series,time,value\ny1,0,1\ny1,zero,2\n").unwrap();
    let out = dglm(&[
        "filter",
        "--config",
        p(&d.join("config.toml")),
        "--data",
        p(&d.join("bad.csv")),
        "--out",
        p(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("run").exists());
}

#[test]
fn missing_output_directory_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "plain-poisson", "20");
    let out = dglm(&["filter", "--config", p(&d.join("config.toml")), "--data", p(&d.join("data.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_reports_both_forecasters() {
    let out = dglm(&["benchmark", "--horizons", "3", "--samples", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
    assert!(String::from_utf8_lossy(&out.stderr).contains("copula speedup"));
}
