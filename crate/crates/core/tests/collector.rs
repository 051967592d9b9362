use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use honion_core::collector::{
    parse_collector_log, start, CollectorConfig, CollectorLogLine, ListenerConfig, ParseMode, OK_RESPONSE,
};
use honion_core::records::read_jsonl;

fn send(addr: SocketAddr, request: &[u8]) -> Vec<u8> {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(request).unwrap();
    let mut out = Vec::new();
    s.read_to_end(&mut out).unwrap();
    out
}

fn listener(port: u16, onion: &str) -> ListenerConfig {
    ListenerConfig {
        port,
        onion_address: onion.into(),
    }
}

#[test]
fn serve_request_parse_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let cfg = CollectorConfig::new(vec![listener(0, "aaaaaaaaaaaaaaaa"), listener(0, "bbbbbbbbbbbbbbbb")], &log);
    let handle = start(&cfg).unwrap();
    let addrs = handle.addresses().to_vec();
    let a = send(addrs[0].1, b"GET /hello?x=1 HTTP/1.1\r\nHost: aaaaaaaaaaaaaaaa.onion\r\n\r\n");
    let b = send(addrs[1].1, b"GET /favicon.ico HTTP/1.0\r\n\r\n");
    handle.shutdown().unwrap();

    assert_eq!(a, OK_RESPONSE);
    assert_eq!(b, OK_RESPONSE);
    let text = String::from_utf8(a).unwrap();
    assert!(!text.contains("Date:") && !text.contains("Server:"));

    let lines: Vec<CollectorLogLine> = read_jsonl(&log).unwrap();
    assert_eq!(lines.len(), 2);
    let stamp = regex::Regex::new(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{3}Z$").unwrap();
    assert!(lines.iter().all(|l| stamp.is_match(&l.received_at)));
    let first = lines.iter().find(|l| l.onion_address == "aaaaaaaaaaaaaaaa").unwrap();
    assert_eq!(first.request_line, "GET /hello?x=1 HTTP/1.1");
    assert_eq!(first.headers, vec![("Host".to_string(), "aaaaaaaaaaaaaaaa.onion".to_string())]);

    let parsed = parse_collector_log(&log, ParseMode::Strict).unwrap();
    let mut paths: Vec<_> = parsed.visits.iter().map(|v| (v.request_path.as_str(), v.is_favicon)).collect();
    paths.sort();
    assert_eq!(paths, [("/favicon.ico", true), ("/hello?x=1", false)]);
    assert!(parsed.visits.iter().all(|v| v.requester_tag.is_empty()));
}

#[test]
fn occupied_port_is_reported_and_others_serve() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = CollectorConfig::new(
        vec![listener(port, "aaaaaaaaaaaaaaaa"), listener(0, "bbbbbbbbbbbbbbbb")],
        dir.path().join("log.jsonl"),
    );
    let handle = start(&cfg).unwrap();
    assert_eq!(handle.bind_errors().len(), 1);
    assert_eq!(handle.addresses().len(), 1);
    assert_eq!(send(handle.addresses()[0].1, b"GET / HTTP/1.1\r\n\r\n"), OK_RESPONSE);
    handle.shutdown().unwrap();
}

#[test]
fn listeners_bind_loopback_only() {
    let dir = tempfile::tempdir().unwrap();
    let handle = start(&CollectorConfig::new(vec![listener(0, "aaaaaaaaaaaaaaaa")], dir.path().join("l"))).unwrap();
    assert!(handle.addresses().iter().all(|(_, a)| a.ip().is_loopback()));
    handle.shutdown().unwrap();
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn cli_collect_flushes_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("collector.jsonl");
    let port = free_port();
    let cfg = CollectorConfig::new(vec![listener(port, "aerukz4jvpg66ajd")], &log);
    let cfg_path = dir.path().join("collector.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_honion"))
        .args(["collect", "--config"])
        .arg(&cfg_path)
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let addr: SocketAddr = ([127, 0, 0, 1], port).into();
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "collector did not start");
        std::thread::sleep(Duration::from_millis(20));
    }
    // the probe connection above closes without data and is not logged
    assert_eq!(send(addr, b"GET /after-start HTTP/1.1\r\n\r\n"), OK_RESPONSE);
    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status();
    if killed.map(|s| s.success()).unwrap_or(false) {
        assert!(child.wait().unwrap().success());
    } else {
        child.kill().unwrap();
        child.wait().unwrap();
    }
    let parsed = parse_collector_log(&log, ParseMode::Strict).unwrap();
    assert_eq!(parsed.visits.len(), 1);
    assert_eq!(parsed.visits[0].request_path, "/after-start");
    assert_eq!(parsed.visits[0].onion_address, "aerukz4jvpg66ajd");
}
