#[path = "../../api/tests/support/mod.rs"]
mod api_support;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use api_support::*;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

fn navsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navsim"))
        .args(args)
        .env_remove("NAVSIM_PROVISIONING_SECRET")
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
        .to_string_lossy()
        .into_owned()
}

fn run(name: &str, seed: &str, report: &Path) -> Output {
    navsim(&["run", "--scenario", &scenario(name), "--seed", seed, "--time-scale", "0", "--report", report.to_str().unwrap()])
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn wide_corridor_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run("corridor_060", "0", &report);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["success"], true);
    assert_eq!(r["collisions"], 0);
    assert!(text(&out.stdout).contains("success"));
}

#[test]
fn narrow_corridor_run_fails_with_no_path() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run("corridor_035", "0", &report);
    assert_eq!(out.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["reason"], "NoPathFound");
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    run("slalom", "3", &a);
    run("slalom", "3", &b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bad_scenario_and_empty_bench_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = navsim(&["run", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("bad.json"));
    let out = navsim(&["bench", "--scenario", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn bench_compares_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.json");
    let out = navsim(&[
        "bench",
        "--scenario",
        &scenario("corridor_060"),
        "--seeds",
        "2",
        "--accel",
        "1.0,0.5",
        "--time-scale",
        "0",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["runs"].as_array().unwrap().len(), 8);
    assert_eq!(r["rows"].as_array().unwrap().len(), 4);
    assert_eq!(r["collisions"], 0);
    let stdout = text(&out.stdout);
    assert!(stdout.contains("dwa") && stdout.contains("trajectory_rollout"));
}

#[test]
fn provision_without_secret_exits_two() {
    let out = navsim(&["provision", "rb-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("NAVSIM_PROVISIONING_SECRET"));
}

#[tokio::test(flavor = "multi_thread")]
async fn provisioned_code_activates_the_robot() {
    let provision = || {
        Command::new(env!("CARGO_BIN_EXE_navsim"))
            .args(["provision", "rb-cli", "--json"])
            .env("NAVSIM_PROVISIONING_SECRET", SECRET)
            .output()
            .unwrap()
    };
    let out = provision();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(out.stdout, provision().stdout);
    let creds: Value = serde_json::from_slice(&out.stdout).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let server = start(config(dir.path())).await;
    let c = Client::new(&server);
    assert_eq!(c.register("cli@example.com").await.status, StatusCode::CREATED);
    let token = c.login("cli@example.com", "control").await;
    let r = c.call(Method::POST, "/robots", Some(&token), Some(json!({ "robot_identifier": "rb-cli" }))).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let r = c
        .call(Method::POST, "/robots/rb-cli/activate", Some(&token), Some(json!({ "activation_code": creds["activation_code"] })))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    let r = c.call(Method::POST, "/robots/rb-cli/diag", None, Some(json!({ "diag_key": creds["diag_key"] }))).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
}
