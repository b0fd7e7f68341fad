use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tourpatch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tourpatch-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn gen(n: &str, seed: &str) -> String {
    let out = run(&["gen", n, "--seed", seed, "--max-cost", "99"]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn gen_output_is_pinned() {
    let text = gen("8", "1");
    assert_eq!(
        hex::encode(Sha256::digest(text.as_bytes())),
        "96d936fcc5732bccfc04905a1605e7948d275df9090d329e0a13447e89c3a25d"
    );
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn malformed_instance_fails() {
    let path = scratch("bad.txt", "3\nINF 1\n1 INF\n");
    let out = run(&["solve", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn missing_file_fails() {
    let out = run(&["solve", "/nonexistent/instance.txt"]);
    assert!(!out.status.success());
}

#[test]
fn solve_report_is_byte_identical() {
    let path = scratch("ten.txt", &gen("10", "7"));
    let a = run(&["solve", path.to_str().unwrap(), "--trace-level", "full"]);
    let b = run(&["solve", path.to_str().unwrap(), "--trace-level", "full"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let tour: Vec<u64> = serde_json::from_value(v["report"]["tour"].clone()).unwrap();
    let mut sorted = tour.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (1..=10).collect::<Vec<_>>());
}

#[test]
fn threads_do_not_change_values() {
    let path = scratch("twelve.txt", &gen("12", "3"));
    let one: Value =
        serde_json::from_slice(&run(&["solve", path.to_str().unwrap()]).stdout).unwrap();
    let four: Value =
        serde_json::from_slice(&run(&["solve", path.to_str().unwrap(), "--threads", "4"]).stdout)
            .unwrap();
    assert_eq!(one["report"]["tour_value"], four["report"]["tour_value"]);
    assert_eq!(one["report"]["phases"], four["report"]["phases"]);
}

#[test]
fn solve_is_not_below_the_oracle() {
    let path = scratch("nine.txt", &gen("9", "11"));
    let solved: Value =
        serde_json::from_slice(&run(&["solve", path.to_str().unwrap()]).stdout).unwrap();
    let oracle = run(&["oracle", path.to_str().unwrap(), "--which", "tsp"]);
    assert!(oracle.status.success());
    let oracle: Value = serde_json::from_slice(&oracle.stdout).unwrap();
    assert!(solved["report"]["tour_value"].as_i64().unwrap() >= oracle["value"].as_i64().unwrap());
    assert_eq!(solved["report"]["padded"], true);
}

#[test]
fn oracle_rejects_large_instances() {
    let path = scratch("big.txt", &gen("20", "1"));
    let out = run(&["oracle", path.to_str().unwrap(), "--which", "derangement"]);
    assert!(!out.status.success());
}

#[test]
fn trace_is_json_lines() {
    let path = scratch("eight.txt", &gen("8", "5"));
    let out = run(&["trace", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let events: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(events.iter().all(|e| e["event"].is_string()));
    assert_eq!(events.last().unwrap()["event"], "result");
    assert!(events.iter().any(|e| e["event"] == "trial"));
}

#[test]
fn trace_rejects_threads() {
    let path = scratch("six.txt", &gen("6", "2"));
    let out = run(&["trace", path.to_str().unwrap(), "--threads", "2"]);
    assert!(!out.status.success());
}

#[test]
fn verify_example4_passes() {
    let out = run(&["verify", "example4"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    assert!(text.contains("PASS matching value"));
}

#[test]
fn verify_unknown_fixture_fails() {
    assert!(!run(&["verify", "example9"]).status.success());
}
