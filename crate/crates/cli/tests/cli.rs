// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectral-cp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// DGP1 with a strong change: p = 6, all series change, N = 3000.
fn simulated(dir: &Path) -> std::path::PathBuf {
    let sim = dir.join("sim");
    ok(&[
        "simulate",
        "--dgp",
        "dgp1",
        "-n",
        "3000",
        "-p",
        "6",
        "--k0",
        "6",
        "-q",
        "1",
        "--seed",
        "4",
        "--out-dir",
        s(&sim),
    ]);
    sim
}

const QUICK: &[&str] = &[
    "--intervals",
    "10",
    "--bootstrap-samples",
    "30",
    "--sparsity-bootstrap-samples",
    "20",
];

#[test]
fn simulate_detect_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let truth = read_json(&sim.join("truth.json"));
    assert_eq!(truth["cp_times"], serde_json::json!([1501]));
    assert_eq!(read_json(&sim.join("manifest.json"))["seed_source"], "flag");

    let det = dir.path().join("det");
    let input = sim.join("series.csv");
    let mut args = vec![
        "detect",
        "--input",
        s(&input),
        "--seed",
        "2",
        "--out-dir",
        s(&det),
    ];
    args.extend_from_slice(QUICK);
    let stdout = ok(&args);
    assert!(stdout.contains("block\ttime\tstatistic\tactive_frequencies"));
    let report = read_json(&det.join("report.json"));
    let n_cp = report["n_change_points"].as_u64().unwrap();
    assert_eq!(
        std::fs::read_dir(det.join("heatmaps")).unwrap().count() as u64,
        n_cp
    );
    let manifest = read_json(&det.join("manifest.json"));
    assert_eq!(manifest["command"], "detect");
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["config"]["n_intervals"], 10);

    let ev = dir.path().join("ev");
    ok(&[
        "evaluate",
        "--report",
        s(&det.join("report.json")),
        "--truth",
        s(&sim.join("truth.json")),
        "--out-dir",
        s(&ev),
    ]);
    let metrics = read_json(&ev.join("metrics.json"));
    assert_eq!(metrics["q_true"], 1);
    assert_eq!(metrics["estimated_blocks"], serde_json::json!([20]), "{metrics}");
    assert_eq!(metrics["ari"].as_f64().unwrap(), 1.0);
}

#[test]
fn missing_input_is_an_io_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&[
        "detect",
        "--input",
        s(&dir.path().join("absent.csv")),
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("I/O error"));
    assert!(!out_dir.exists());
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,oops\n").unwrap();
    assert_eq!(cli(&["detect", "--input", s(&bad)]).status.code(), Some(4));

    let short = dir.path().join("short.csv");
    std::fs::write(&short, "1\n2\n3\n").unwrap();
    assert_eq!(cli(&["tune", "--input", s(&short)]).status.code(), Some(7));

    let sim = simulated(dir.path());
    let other = dir.path().join("other");
    ok(&[
        "simulate",
        "-n",
        "2000",
        "-p",
        "6",
        "--seed",
        "1",
        "--out-dir",
        s(&other),
    ]);
    let det = dir.path().join("det");
    let input = sim.join("series.csv");
    ok(&[
        "detect",
        "--input",
        s(&input),
        "--sparsity",
        "6",
        "--threshold",
        "1e9",
        "--seed",
        "0",
        "--out-dir",
        s(&det),
    ]);
    let out = cli(&[
        "evaluate",
        "--report",
        s(&det.join("report.json")),
        "--truth",
        s(&other.join("truth.json")),
    ]);
    assert_eq!(out.status.code(), Some(11), "mismatched N is an input error");
    assert_eq!(cli(&["detect"]).status.code(), Some(2), "usage error");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        "# test\nblock_length = 60\nintervals = 7\nthreshold_rule = per-term\nseed = 11\n",
    )
    .unwrap();
    let out = dir.path().join("tune");
    let input = sim.join("series.csv");
    let mut args = vec![
        "tune",
        "--input",
        s(&input),
        "--config",
        s(&conf),
        "--out-dir",
        s(&out),
    ];
    args.extend_from_slice(QUICK);
    ok(&args);
    let m = read_json(&out.join("manifest.json"));
    let cfg = &m["config"];
    assert_eq!(cfg["block_length"], 60);
    assert_eq!(cfg["n_intervals"], 10, "flag beats file");
    assert_eq!(cfg["threshold_rule"], "per-term");
    // B = 50 → ⌊50^0.6 / 2⌋ = 5, recomputed for the file's block length
    assert_eq!(cfg["nu2"], 5);
    assert_eq!(
        (m["seed"].as_u64(), m["seed_source"].as_str()),
        (Some(11), Some("config"))
    );

    std::fs::write(&conf, "nu2 = banana\n").unwrap();
    assert_eq!(
        cli(&["tune", "--input", s(&input), "--config", s(&conf)])
            .status
            .code(),
        Some(7)
    );
}

#[test]
fn tune_is_seeded_and_monotone_in_the_quantile() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let input = sim.join("series.csv");
    let tau = |q: &str, out: &str| {
        let out = dir.path().join(out);
        let mut args = vec![
            "tune",
            "--input",
            s(&input),
            "--sparsity",
            "3",
            "--quantile",
            q,
            "--seed",
            "5",
            "--out-dir",
            s(&out),
        ];
        args.extend_from_slice(QUICK);
        ok(&args);
        read_json(&out.join("tuning.json"))["tau"].as_f64().unwrap()
    };
    let (a, b, c) = (tau("0.95", "a"), tau("0.95", "b"), tau("0.90", "c"));
    assert_eq!(a, b);
    assert!(c <= a);

    // without --seed a seed is generated and recorded
    let out = dir.path().join("g");
    let mut args = vec![
        "tune",
        "--input",
        s(&input),
        "--sparsity",
        "3",
        "--out-dir",
        s(&out),
    ];
    args.extend_from_slice(QUICK);
    ok(&args);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["seed_source"], "generated");
    assert_eq!(m["seed"], m["config"]["seed"]);
}

#[test]
fn zero_variance_input_tunes_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "1.5,2\n".repeat(400)).unwrap();
    let mut args = vec![
        "tune",
        "--input",
        s(&flat),
        "--seed",
        "0",
        "--out-dir",
        s(dir.path()),
    ];
    args.extend_from_slice(QUICK);
    let stdout = ok(&args);
    let t = read_json(&dir.path().join("tuning.json"));
    assert_eq!(
        (t["k"].as_u64(), t["tau"].as_f64()),
        (Some(1), Some(0.0)),
        "{stdout}"
    );
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let input = sim.join("series.csv");
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let mut args = vec![
            "--threads",
            threads,
            "detect",
            "--input",
            s(&input),
            "--seed",
            "9",
            "--out-dir",
            s(&out),
        ];
        args.extend_from_slice(QUICK);
        ok(&args);
        std::fs::read_to_string(out.join("report.json")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}
