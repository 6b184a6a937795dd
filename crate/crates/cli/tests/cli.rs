use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pvss(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvss"))
        .arg("--data")
        .arg(data)
        .args(args)
        .env_remove("PVSS_DATA")
        .output()
        .expect("run pvss")
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = pvss(data, args);
    assert!(
        out.status.success(),
        "pvss {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_of(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("{e}: {line}"));
    v["error"].clone()
}

#[test]
fn generate_ingest_evaluate_and_search() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path();
    let gen: Value = serde_json::from_str(&ok(data, &["gen", "--seed", "7", "--cameras", "20", "--vehicles", "200"])).unwrap();
    assert_eq!(gen["cameras"], 20);
    let ingest: Value = serde_json::from_str(&ok(data, &["ingest"])).unwrap();
    assert_eq!(ingest["total"], gen["tracks"]);

    // eval builds whatever is missing by itself
    let table = ok(data, &["eval"]);
    for m in ["App ", "App+Plate", "Full"] {
        assert!(table.contains(m), "{table}");
    }
    assert!(data.join("report.txt").exists());
    let lines = std::fs::read_to_string(data.join("report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);

    // search needs a persisted index
    let out = pvss(data, &["search", "--track", "1:0", "--t-start", "0", "--t-end", "3600"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["kind"], "conflict");

    ok(data, &["learn-weights"]);
    ok(data, &["train-fusion"]);
    ok(data, &["build-index"]);
    let stream = ok(
        data,
        &["search", "--track", "1:0", "--t-start", "0", "--t-end", "3600", "--hops", "2", "--k", "5"],
    );
    let records: Vec<Value> = stream.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let last = records.last().unwrap();
    assert_eq!(last["type"], "final");
    assert!(records[..records.len() - 1].iter().all(|r| r["type"] == "snapshot"));
    let entries = last["list"]["entries"].as_array().unwrap();
    assert!(!entries.is_empty() && entries.len() <= 5);

    // the same search as a request file gives the same stream
    let req = serde_json::json!({
        "query": {"track": {"camera_id": 1, "vehicle_id": 0}},
        "time_range": [0.0, 3600.0],
        "scope": {"hops": {"start": 1, "max_hops": 2}},
        "k": 5
    });
    let file = data.join("req.json");
    std::fs::write(&file, req.to_string()).unwrap();
    assert_eq!(ok(data, &["search", "--request", file.to_str().unwrap()]), stream);

    let text = ok(
        data,
        &["search", "--track", "1:0", "--t-start", "0", "--t-end", "3600", "--hops", "2", "--k", "5", "--format", "text"],
    );
    assert!(text.lines().last().unwrap().starts_with("final list=[("), "{text}");
}

#[test]
fn invalid_invocations_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path();
    let out = pvss(data, &["search", "--track", "1:0", "--t-start", "10", "--t-end", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");

    for args in [&["frobnicate"][..], &["search", "--track", "nope", "--t-start", "0", "--t-end", "1"], &["gen", "--cameras", "1"]] {
        let out = pvss(data, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_of(&out)["kind"], "usage");
    }

    // nothing generated yet
    let out = pvss(data, &["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["kind"], "not_found");
}

#[test]
fn config_file_and_environment_choose_the_data_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("pvss.toml");
    let from_file = tmp.path().join("from-file");
    std::fs::write(&cfg, format!("data_dir = {:?}\nk = 7\n", from_file.to_str().unwrap())).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pvss"))
        .args(["--config", cfg.to_str().unwrap(), "gen", "--vehicles", "10"])
        .env_remove("PVSS_DATA")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(from_file.join("world/tracks.txt").exists());

    let from_env = tmp.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_pvss"))
        .args(["--config", cfg.to_str().unwrap(), "gen", "--vehicles", "10"])
        .env("PVSS_DATA", &from_env)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(from_env.join("world/tracks.txt").exists());

    std::fs::write(&cfg, "colour = \"red\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pvss")).args(["--config", cfg.to_str().unwrap(), "eval"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

/// Minimal HTTP/1.0 exchange, so the body arrives unchunked.
fn post(addr: &str, path: &str, body: &str) -> (u16, String) {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(
        s,
        "POST {path} HTTP/1.0\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let (head, body) = resp.split_once("\r\n\r\n").unwrap();
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    (status, body.to_string())
}

#[test]
fn served_search_matches_cli_search() {
    use std::io::{BufRead, BufReader};
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path();
    ok(data, &["gen", "--vehicles", "40"]);
    ok(data, &["ingest"]);
    ok(data, &["learn-weights"]);
    ok(data, &["train-fusion"]);
    ok(data, &["build-index"]);
    let args = ["search", "--track", "4:1", "--t-start", "0", "--t-end", "5000", "--hops", "3", "--k", "10"];
    let cli = ok(data, &args);

    let mut server = Command::new(env!("CARGO_BIN_EXE_pvss"))
        .arg("--data")
        .arg(data)
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();

    let req = serde_json::json!({
        "query": {"track": {"camera_id": 4, "vehicle_id": 1}},
        "time_range": [0.0, 5000.0],
        "scope": {"hops": {"start": 4, "max_hops": 3}},
        "k": 10
    });
    let (status, body) = post(&addr, "/search", &req.to_string());
    let (bad, _) = post(&addr, "/search", "{\"query\":");
    server.kill().unwrap();
    server.wait().unwrap();
    assert_eq!(status, 200, "{body}");
    assert_eq!(bad, 400);
    assert_eq!(body.lines().last(), cli.lines().last());
    assert_eq!(body, cli);
}
