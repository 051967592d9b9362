use std::path::Path;
use std::process::{Command, Output};

fn honion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_honion"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn plan_prints_batch_size() {
    let out = honion(&["plan", "--hsdirs", "3000", "--coverage", "0.95"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["honions_required"], 1497);
    let out = honion(&["plan", "--hsdirs", "3000", "--coverage", "0.95", "--strict"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["honions_required"], 1498);
    assert!(v["predicted_coverage"].as_f64().unwrap() >= 0.95);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = honion(&["plan", "--hsdirs", "3000", "--coverage", "1.2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    let out = honion(&["detect", "--graph", "/nonexistent/graph.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = honion(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_finds_planted_snoopers() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    std::fs::write(
        &config,
        r#"{
            "seed": 3,
            "n_hsdirs": 120,
            "n_days": 10,
            "schedules": { "daily": 60, "weekly": 0, "monthly": 0 },
            "snoopers": {
                "hsdir-00010": { "kind": "persistent_immediate" },
                "hsdir-00090": { "kind": "persistent_immediate", "request_paths": ["/", "/favicon.ico"] }
            },
            "relay_tags": { "hsdir-00010": ["cloud", "exit"] }
        }"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    assert!(honion(&["simulate", "--config", p(&config), "--out", p(&run)]).status.success());
    assert!(honion(&["build-graph", "--in", p(&run)]).status.success());
    let edges = std::fs::read_to_string(run.join("edges.tsv")).unwrap();
    assert!(edges.lines().all(|l| l.split('\t').count() == 2));
    let out = honion(&["detect", "--graph", p(&run.join("graph.json")), "--method", "both"]);
    assert!(out.status.success());
    let detection: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("detection.json")).unwrap()).unwrap();
    assert!(detection["results"][0]["runtime_secs"].is_number());
    let mut labels: Vec<&str> = detection["suspects"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["relay"]["label"].as_str().unwrap())
        .collect();
    labels.sort();
    assert_eq!(labels, ["hsdir-00010", "hsdir-00090"]);

    let report = dir.path().join("report");
    assert!(honion(&["report", "--in", p(&run), "--format", "json", "--out", p(&report)]).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("summary.json")).unwrap()).unwrap();
    let rows = summary["explaining_set"].as_array().unwrap();
    assert!(rows.iter().all(|r| r["category"] == "immediate"));
    let both = summary["relay_types"].as_array().unwrap().iter().find(|r| r["relay_type"] == "both").unwrap();
    assert_eq!(both["count"], 1);
    let manual = summary["request_kinds"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["probe_kind"] == "manual_browser")
        .unwrap();
    assert!(manual["count"].as_u64().unwrap() > 0);
}

#[test]
fn parse_log_strict_and_skip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("collector.jsonl");
    let good = r#"{"onion_address":"aerukz4jvpg66ajd","timestamp":100,"request_path":"/","is_favicon":false}"#;
    std::fs::write(&log, format!("{good}\n{{broken\n{good}\n")).unwrap();
    let out_path = dir.path().join("visits.jsonl");
    let out = honion(&["parse-log", "--log", p(&log), "--out", p(&out_path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = honion(&["parse-log", "--log", p(&log), "--out", p(&out_path), "--skip-malformed"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&out_path).unwrap().lines().count(), 2);
}
