//! End-to-end runs of the `mvstr` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvstr"))
        .args(args)
        .output()
        .expect("spawn mvstr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn synth(dir: &Path, n: usize, t: usize) -> String {
    let path = dir.join("panel.csv");
    let out = run(&[
        "synth",
        "--n",
        &n.to_string(),
        "--t",
        &t.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["solve", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["bench", "nothing"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "repetitions = 0\n").unwrap();
    assert_eq!(
        code(&run(&["bench", "rate", "--config", path.to_str().unwrap()])),
        1
    );
}

#[test]
fn data_errors_exit_with_two() {
    assert_eq!(
        code(&run(&["spectrum", "--input", "/no/such/panel.csv"])),
        2
    );
    let out = run(&[
        "project", "--v", "0.5,0.5", "--mu", "0.1,0.2", "--target", "0.3",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn numeric_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zeros.csv");
    std::fs::write(&path, "asset,p1,p2,p3\na,0,0,0\nb,0,0,0\nc,0,0,0\n").unwrap();
    let out = run(&[
        "solve",
        "--input",
        path.to_str().unwrap(),
        "--model",
        "str",
        "--ell",
        "1",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_then_spectrum_and_solve() {
    let dir = tempfile::tempdir().unwrap();
    let panel = synth(dir.path(), 12, 48);

    let spec = json(&run(&["spectrum", "--input", &panel]));
    let sv = spec["singular_values"].as_array().expect("singular values");
    assert!(!sv.is_empty() && sv.len() <= 12);

    for model in ["baseline", "sketch", "str"] {
        let out = json(&run(&[
            "solve", "--input", &panel, "--model", model, "--seed", "4",
        ]));
        let x: Vec<f64> = out["result"]["x"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert_eq!(x.len(), 12);
        assert!(x.iter().all(|&v| v >= -1e-12));
        assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn project_prints_point_and_multiplier() {
    let out = json(&run(&[
        "project",
        "--v",
        "0.9,-0.3,0.1",
        "--mu",
        "0.01,0.03,0.02",
        "--target",
        "0.025",
    ]));
    let x: Vec<f64> = out["x"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let ret = 0.01 * x[0] + 0.03 * x[1] + 0.02 * x[2];
    assert!(ret >= 0.025 - 1e-12);
    assert!(out["nu"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_writes_report_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rate.json");
    let out = run(&["bench", "rate", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["experiment"], "rate");
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}
