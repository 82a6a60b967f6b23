use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn nanoswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanoswarm"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap()
}

#[test]
fn run_writes_log_into_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = nanoswarm(&[
        "run",
        scenario("hover.toml").to_str().unwrap(),
        "--until",
        "1.5",
        "--log",
        dir.path().to_str().unwrap(),
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["scenario"], "hover");
    assert!((summary["final_time"].as_f64().unwrap() - 1.5).abs() < 1e-9);
    assert_eq!(summary["shutdowns"], 0);
    let log = dir.path().join("hover.csv");
    assert_eq!(PathBuf::from(summary["log_path"].as_str().unwrap()), log);
    let rows = fs::read_to_string(&log).unwrap().lines().count();
    assert_eq!(rows as u64, 1 + summary["log_records"].as_u64().unwrap());
    let meta: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hover.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], summary["seed"]);
}

#[test]
fn seed_override_is_reported() {
    let out = nanoswarm(&[
        "run",
        scenario("hover.toml").to_str().unwrap(),
        "--until",
        "0.2",
        "--seed",
        "77",
        "--no-log",
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["seed"], 77);
    assert!(summary.get("log_path").is_none());
}

#[test]
fn validate_reports_every_bundled_scenario() {
    for entry in fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let v = stdout_json(&nanoswarm(&["validate", path.to_str().unwrap()]));
            assert_eq!(v["valid"], true, "{path:?}");
            assert_eq!(v["digest"].as_str().unwrap().len(), 64);
        }
    }
}

#[test]
fn invalid_scenario_gives_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nname = \"x\"\nduration = 1.0\nagents = []\n\n[geofence]\nmin = [-1.0, -1.0, -1.0]\nmax = [1.0, 1.0, 1.0]\n").unwrap();
    let out = nanoswarm(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("agents"));

    let out = nanoswarm(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");
}

#[test]
fn solve_pdvrp_two_vehicles() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    fs::write(
        &inst,
        r#"{"vehicles":[{"start":[0,0,1],"capacity":1},{"start":[2,0,1],"capacity":1}],
            "tasks":[{"pickup":[0,1,0],"delivery":[0,2,0],"load":1},
                     {"pickup":[2,1,0],"delivery":[2,2,0],"load":1}]}"#,
    )
    .unwrap();
    let exact = stdout_json(&nanoswarm(&["solve-pdvrp", inst.to_str().unwrap()]));
    assert_eq!(exact["solver"], "exact");
    assert!((exact["cost"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert_eq!(exact["routes"], serde_json::json!([[0], [1]]));
    let greedy = stdout_json(&nanoswarm(&[
        "solve-pdvrp",
        inst.to_str().unwrap(),
        "--greedy",
    ]));
    assert!((greedy["cost"].as_f64().unwrap() - 4.0).abs() < 1e-12);

    fs::write(&inst, r#"{"vehicles":[{"start":[0,0,1],"capacity":0.5}],"tasks":[{"pickup":[0,1,0],"delivery":[0,2,0],"load":1}]}"#).unwrap();
    let out = nanoswarm(&["solve-pdvrp", inst.to_str().unwrap()]);
    assert_eq!(stderr_json(&out)["error"], "tasking");
}

#[test]
fn plan_writes_samples_through_waypoints() {
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("wp.json");
    let csv = dir.path().join("plan.csv");
    fs::write(
        &wp,
        r#"[{"position":[0,0,1],"time":0},{"position":[1,0,1],"time":2},{"position":[1,1,1.5],"time":4}]"#,
    )
    .unwrap();
    let out = nanoswarm(&[
        "plan",
        wp.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--rate",
        "50",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 201);
    let at = |t: f64| rows.iter().find(|r| (r[0] - t).abs() < 1e-9).unwrap();
    assert!((at(2.0)[1] - 1.0).abs() < 1e-9 && at(2.0)[2].abs() < 1e-9);
    let last = rows.last().unwrap();
    assert!((last[3] - 1.5).abs() < 1e-9);
    assert!(last[4..7].iter().all(|v| v.abs() < 1e-9));

    fs::write(&wp, r#"[{"position":[0,0,1],"time":0}]"#).unwrap();
    assert_eq!(
        stderr_json(&nanoswarm(&["plan", wp.to_str().unwrap()]))["error"],
        "planning"
    );
    fs::write(&wp, "{").unwrap();
    assert_eq!(
        stderr_json(&nanoswarm(&["plan", wp.to_str().unwrap()]))["error"],
        "input"
    );
}

#[test]
fn gateway_run_serves_and_finishes() {
    let out = nanoswarm(&[
        "run",
        scenario("hover.toml").to_str().unwrap(),
        "--until",
        "1.0",
        "--no-log",
        "--gateway",
        "--port",
        "0",
        "--realtime",
        "10",
    ]);
    let summary = stdout_json(&out);
    assert!((summary["final_time"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let first: Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(first["event"], "listening");
}
