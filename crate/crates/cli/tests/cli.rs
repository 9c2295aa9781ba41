use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cbcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbcl"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cbcl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn synthetic(dir: &Path, ext: &str, extra: &[&str]) -> (String, String) {
    let train = dir.join(format!("train.{ext}")).display().to_string();
    let test = dir.join(format!("test.{ext}")).display().to_string();
    let mut args = vec![
        "gen-synthetic",
        "--classes",
        "6",
        "--train-per-class",
        "30",
        "--test-per-class",
        "10",
        "--train-out",
        &train,
        "--test-out",
        &test,
    ];
    args.extend_from_slice(extra);
    if !extra.contains(&"--dim") {
        args.extend(["--dim", "8"]);
    }
    ok(&args);
    (train, test)
}

#[test]
fn generate_run_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(dir.path(), "cbfv", &[]);
    let out = dir.path().join("report.jsonl");
    let stores = dir.path().join("stores");
    let stdout = ok(&[
        "run",
        "--method",
        "cbcl-pr",
        "--classes-per-increment",
        "2",
        "--seeds",
        "0,1",
        "--train",
        &train,
        "--test",
        &test,
        "--out",
        out.to_str().unwrap(),
        "--timings",
        dir.path().join("t.jsonl").to_str().unwrap(),
        "--store-dir",
        stores.to_str().unwrap(),
    ]);
    let summary: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["method"], "cbcl-pr");

    let lines = jsonl(&out);
    assert_eq!(lines.len(), 1 + 2 * 3 + 1);
    assert_eq!(lines[0]["record"], "config");
    assert!(lines[1..7].iter().all(|l| l["record"] == "increment"));
    assert_eq!(lines[7]["record"], "summary");
    assert_eq!(
        lines[7]["mean_average_incremental_accuracy"],
        summary["mean_average_incremental_accuracy"]
    );
    let timings = jsonl(&dir.path().join("t.jsonl"));
    assert_eq!(timings.len(), 6);
    assert!(timings.iter().all(|l| l["record"] == "timing"));

    let inspect: Value = serde_json::from_str(&ok(&[
        "inspect",
        stores.join("store-seed1.cbms").to_str().unwrap(),
        "--clusters",
    ]))
    .unwrap();
    assert_eq!(inspect["classes"], 6);
    assert_eq!(inspect["dim"], 8);
    assert_eq!(inspect["total_clusters"], lines[6]["total_clusters"]);
    assert_eq!(inspect["per_class"][0]["stored_count"], 30);
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(dir.path(), "csv", &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "run",
            "--method",
            "cbcl-pr-diag",
            "--shots",
            "5",
            "--classes-per-increment",
            "3",
            "--seeds",
            "0..3",
            "--train",
            &train,
            "--test",
            &test,
            "--out",
            out.to_str().unwrap(),
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.jsonl"), run("b.jsonl"));
}

#[test]
fn config_file_flags_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(dir.path(), "cbfv", &[]);
    let cfg = dir.path().join("exp.conf");
    std::fs::write(
        &cfg,
        format!("# baseline\nmethod = ncm\nclasses-per-increment = 3\nseeds = 0\ntrain = {train}\ntest = {test}\n"),
    )
    .unwrap();
    let out = dir.path().join("r.jsonl");
    ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "cbcl",
        "--set",
        "top-n=3",
        "--out",
        out.to_str().unwrap(),
    ]);
    let lines = jsonl(&out);
    let summary = lines.last().unwrap();
    assert_eq!(summary["method"], "cbcl");
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["method"], "cbcl");
    assert_eq!(lines[0]["classes_per_increment"], 3);
    assert_eq!(lines[0]["voting"]["top_n"], 3);
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(dir.path(), "cbfv", &[]);
    let out = dir.path().join("r.jsonl");
    for (args, kind) in [
        (vec!["--method", "nope"], "invalid_argument"),
        (vec!["--set", "distance-threshold=-1"], "invalid_argument"),
        (
            vec!["--budget", "3", "--classes-per-increment", "6"],
            "budget_too_small",
        ),
    ] {
        let mut full = vec![
            "run",
            "--train",
            &train,
            "--test",
            &test,
            "--seeds",
            "0",
            "--out",
            out.to_str().unwrap(),
        ];
        full.extend(args.iter().copied());
        let o = cbcl(&full);
        assert!(!o.status.success(), "{args:?}");
        let err: Value = serde_json::from_str(String::from_utf8(o.stderr).unwrap().trim()).unwrap();
        assert_eq!(err["record"], "error");
        assert_eq!(err["kind"], kind, "{args:?}: {err}");
    }
    let o = cbcl(&["inspect", dir.path().join("missing.cbms").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn budget_sweep_writes_both_policies() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(dir.path(), "cbfv", &[]);
    let out = dir.path().join("sweep.jsonl");
    ok(&[
        "sweep-budget",
        "--method",
        "cbcl-pr",
        "--classes-per-increment",
        "2",
        "--seeds",
        "0",
        "--train",
        &train,
        "--test",
        &test,
        "--budgets",
        "12,unlimited",
        "--out",
        out.to_str().unwrap(),
    ]);
    let lines = jsonl(&out);
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["record"] == "budget_point"));
    let policies: Vec<&str> = lines
        .iter()
        .map(|l| l["policy"].as_str().unwrap())
        .collect();
    assert!(policies.contains(&"remove"));
}

#[test]
fn pseudo_demo_needs_two_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synthetic(dir.path(), "csv", &["--dim", "2", "--spread", "0.5"]);
    let out = dir.path().join("demo");
    let metrics: Value = serde_json::from_str(
        ok(&[
            "demo-pseudo",
            "--input",
            &train,
            "--distance-threshold",
            "1.5",
            "--out",
            out.to_str().unwrap(),
        ])
        .trim(),
    )
    .unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 6);
    for f in ["original.csv", "pseudo.csv", "metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    std::fs::create_dir(dir.path().join("d8")).unwrap();
    let (train8, _) = synthetic(&dir.path().join("d8"), "csv", &[]);
    assert!(!cbcl(&[
        "demo-pseudo",
        "--input",
        &train8,
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
}

#[test]
fn small_prediction_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.jsonl");
    ok(&[
        "bench-predict",
        "--sizes",
        "20,40,80",
        "--dim",
        "16",
        "--classes",
        "5",
        "--queries",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    let lines = jsonl(&out);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["record"], "fit");
    assert!(lines[3]["voting"]["slope"].is_number());
}
