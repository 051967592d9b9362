//! Honeypot back end: loopback HTTP listeners, one per honion, that answer
//! every request with the same empty page and log it.
//!
//! All listeners share one process and one log writer thread. A request is
//! answered only after its log line has been handed to the writer, so a
//! response never outruns its record.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{is_favicon_path, read_jsonl_lenient, JsonlError, VisitRecord};

pub const OK_RESPONSE: &[u8] = b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
pub const BAD_REQUEST_RESPONSE: &[u8] = b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";

const READ_TIMEOUT: Duration = Duration::from_secs(5);
const DRAIN_TIMEOUT: Duration = Duration::from_millis(500);
const DRAIN_LIMIT: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("invalid collector configuration: {0}")]
    Config(String),
    #[error("cannot bind listener for {onion_address} on port {port}: {source}")]
    Bind {
        port: u16,
        onion_address: String,
        source: io::Error,
    },
    #[error("log write failed: {0}")]
    LogWrite(io::Error),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerConfig {
    /// 0 picks an ephemeral port.
    pub port: u16,
    pub onion_address: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorConfig {
    pub listeners: Vec<ListenerConfig>,
    pub log_path: PathBuf,
    #[serde(default = "default_max_request_bytes")]
    pub max_request_bytes: usize,
}

fn default_max_request_bytes() -> usize {
    8192
}

impl CollectorConfig {
    pub fn new(listeners: Vec<ListenerConfig>, log_path: impl Into<PathBuf>) -> Self {
        CollectorConfig {
            listeners,
            log_path: log_path.into(),
            max_request_bytes: default_max_request_bytes(),
        }
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        let mut seen = HashSet::new();
        for l in &self.listeners {
            if l.port != 0 && !seen.insert(l.port) {
                return Err(CollectorError::Config(format!("port {} used twice", l.port)));
            }
        }
        if self.max_request_bytes < 16 {
            return Err(CollectorError::Config("max_request_bytes must be at least 16".into()));
        }
        Ok(())
    }
}

/// One line of the collector log. Its visit fields match [`VisitRecord`], so
/// the file can be read as a visit log directly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorLogLine {
    pub onion_address: String,
    /// Unix seconds.
    pub timestamp: u64,
    /// UTC, millisecond precision.
    pub received_at: String,
    pub request_path: String,
    pub is_favicon: bool,
    pub request_line: String,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default)]
    pub malformed: bool,
    #[serde(default)]
    pub truncated: bool,
    /// Raw bytes (lossy UTF-8) of requests that did not parse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

struct ParsedRequest {
    request_line: String,
    path: String,
    headers: Vec<(String, String)>,
}

fn parse_request(head: &[u8]) -> Option<ParsedRequest> {
    let text = std::str::from_utf8(head).ok()?;
    let mut lines = text.split("\r\n");
    let request_line = lines.next()?;
    let mut parts = request_line.split(' ');
    let (method, target, version) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some()
        || method.is_empty()
        || !method.bytes().all(|b| b.is_ascii_uppercase())
        || !(target.starts_with('/') || target == "*" || target.starts_with("http://"))
        || !matches!(version, "HTTP/1.0" | "HTTP/1.1")
    {
        return None;
    }
    let mut headers = Vec::new();
    for line in lines {
        if line.is_empty() {
            break;
        }
        let (name, value) = line.split_once(':')?;
        if name.is_empty() || name.bytes().any(|b| b.is_ascii_whitespace()) {
            return None;
        }
        headers.push((name.to_string(), value.trim().to_string()));
    }
    let path = match target.strip_prefix("http://") {
        Some(rest) => rest.find('/').map_or("/".to_string(), |i| rest[i..].to_string()),
        None => target.to_string(),
    };
    Some(ParsedRequest {
        request_line: request_line.to_string(),
        path,
        headers,
    })
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
}

/// Header block of a request, cut at `max` bytes.
fn read_head(stream: &mut TcpStream, max: usize) -> io::Result<(Vec<u8>, bool)> {
    let mut buf = Vec::with_capacity(1024.min(max));
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(end) = find_header_end(&buf) {
            buf.truncate(end);
            return Ok((buf, false));
        }
        if buf.len() >= max {
            buf.truncate(max);
            return Ok((buf, true));
        }
        let want = chunk.len().min(max - buf.len());
        match stream.read(&mut chunk[..want]) {
            Ok(0) => return Ok((buf, false)),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Ok((buf, false))
            }
            Err(e) => return Err(e),
        }
    }
}

fn now_stamp() -> (u64, String) {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let utc = chrono::DateTime::<chrono::Utc>::from(UNIX_EPOCH + now);
    (now.as_secs(), utc.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string())
}

fn log_line_for(onion_address: &str, head: &[u8], truncated: bool) -> (CollectorLogLine, bool) {
    let (timestamp, received_at) = now_stamp();
    // A truncated head may end mid-line; parse only complete lines.
    let parse_input = if truncated {
        match head.windows(2).rposition(|w| w == b"\r\n") {
            Some(p) => &head[..p + 2],
            None => head,
        }
    } else {
        head
    };
    match parse_request(parse_input) {
        Some(req) => (
            CollectorLogLine {
                onion_address: onion_address.to_string(),
                timestamp,
                received_at,
                is_favicon: is_favicon_path(&req.path),
                request_path: req.path,
                request_line: req.request_line,
                headers: req.headers,
                malformed: false,
                truncated,
                raw: None,
            },
            true,
        ),
        None => (
            CollectorLogLine {
                onion_address: onion_address.to_string(),
                timestamp,
                received_at,
                request_path: String::new(),
                is_favicon: false,
                request_line: String::new(),
                headers: Vec::new(),
                malformed: true,
                truncated,
                raw: Some(String::from_utf8_lossy(head).into_owned()),
            },
            false,
        ),
    }
}

fn handle_connection(mut stream: TcpStream, onion_address: &str, max: usize, log: &Sender<String>) {
    let _ = stream.set_read_timeout(Some(READ_TIMEOUT));
    let (head, truncated) = match read_head(&mut stream, max) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("{onion_address}: read failed: {e}");
            return;
        }
    };
    if head.is_empty() {
        return;
    }
    let (line, well_formed) = log_line_for(onion_address, &head, truncated);
    let encoded = serde_json::to_string(&line).expect("log line serializes");
    if log.send(encoded).is_err() {
        // writer is gone: never acknowledge an unlogged request
        return;
    }
    let response = if well_formed { OK_RESPONSE } else { BAD_REQUEST_RESPONSE };
    if stream.write_all(response).and_then(|_| stream.flush()).is_err() {
        return;
    }
    let _ = stream.shutdown(std::net::Shutdown::Write);
    // Consume whatever the client still sends so closing does not reset the
    // connection before it reads the response.
    let _ = stream.set_read_timeout(Some(DRAIN_TIMEOUT));
    let mut sink = [0u8; 8192];
    let mut drained = 0;
    while drained < DRAIN_LIMIT {
        match stream.read(&mut sink) {
            Ok(0) | Err(_) => break,
            Ok(n) => drained += n,
        }
    }
}

enum Event {
    Stop,
    LogFailure(io::Error),
}

pub struct CollectorHandle {
    addrs: Vec<(String, SocketAddr)>,
    bind_errors: Vec<CollectorError>,
    stopping: Arc<AtomicBool>,
    acceptors: Vec<JoinHandle<()>>,
    log_tx: Option<Sender<String>>,
    writer: Option<JoinHandle<io::Result<()>>>,
    events_tx: Sender<Event>,
    events_rx: Receiver<Event>,
    connections: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl CollectorHandle {
    /// `(onion_address, bound address)` for every listener that started.
    pub fn addresses(&self) -> &[(String, SocketAddr)] {
        &self.addrs
    }

    pub fn bind_errors(&self) -> &[CollectorError] {
        &self.bind_errors
    }

    /// Blocks until [`stop_signal`](Self::stop_signal) fires or the log writer
    /// fails, then shuts down.
    pub fn wait(self) -> Result<(), CollectorError> {
        let failure = match self.events_rx.recv() {
            Ok(Event::LogFailure(e)) => Some(e),
            _ => None,
        };
        let result = self.shutdown();
        match failure {
            Some(e) => Err(CollectorError::LogWrite(e)),
            None => result,
        }
    }

    /// A callback that makes [`wait`](Self::wait) return.
    pub fn stop_signal(&self) -> impl Fn() + Send + 'static {
        let tx = self.events_tx.clone();
        move || {
            let _ = tx.send(Event::Stop);
        }
    }

    /// Stops accepting, finishes in-flight requests and flushes the log.
    pub fn shutdown(mut self) -> Result<(), CollectorError> {
        self.stopping.store(true, Ordering::SeqCst);
        for (_, addr) in &self.addrs {
            // wake the blocking accept
            let _ = TcpStream::connect_timeout(addr, Duration::from_millis(200));
        }
        for t in self.acceptors.drain(..) {
            let _ = t.join();
        }
        let pending: Vec<JoinHandle<()>> = std::mem::take(&mut *self.connections.lock().expect("lock"));
        for t in pending {
            let _ = t.join();
        }
        drop(self.log_tx.take());
        match self.writer.take().map(JoinHandle::join) {
            Some(Ok(Err(e))) => Err(CollectorError::LogWrite(e)),
            _ => Ok(()),
        }
    }
}

fn open_log(path: &Path) -> Result<File, CollectorError> {
    OpenOptions::new().create(true).append(true).open(path).map_err(CollectorError::LogWrite)
}

/// Binds every listener on 127.0.0.1 and starts serving in background threads.
/// Listeners that fail to bind are reported and skipped.
pub fn start(cfg: &CollectorConfig) -> Result<CollectorHandle, CollectorError> {
    cfg.validate()?;
    let file = open_log(&cfg.log_path)?;
    let (events_tx, events_rx) = mpsc::channel();
    let (log_tx, log_rx) = mpsc::channel::<String>();

    let writer_events = events_tx.clone();
    let writer = thread::Builder::new()
        .name("collector-log".into())
        .spawn(move || {
            let mut out = BufWriter::new(file);
            let result = (|| {
                while let Ok(line) = log_rx.recv() {
                    out.write_all(line.as_bytes())?;
                    out.write_all(b"\n")?;
                    // batch whatever is already queued, then flush
                    while let Ok(more) = log_rx.try_recv() {
                        out.write_all(more.as_bytes())?;
                        out.write_all(b"\n")?;
                    }
                    out.flush()?;
                }
                out.flush()
            })();
            if let Err(e) = &result {
                log::error!("collector log write failed: {e}");
                let _ = writer_events.send(Event::LogFailure(io::Error::new(e.kind(), e.to_string())));
            }
            result
        })
        .map_err(CollectorError::LogWrite)?;

    let stopping = Arc::new(AtomicBool::new(false));
    let connections: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
    let mut addrs = Vec::new();
    let mut bind_errors = Vec::new();
    let mut acceptors = Vec::new();
    for l in &cfg.listeners {
        let listener = match TcpListener::bind((Ipv4Addr::LOCALHOST, l.port)) {
            Ok(listener) => listener,
            Err(source) => {
                log::error!("bind failed for {} on port {}: {source}", l.onion_address, l.port);
                bind_errors.push(CollectorError::Bind {
                    port: l.port,
                    onion_address: l.onion_address.clone(),
                    source,
                });
                continue;
            }
        };
        let addr = listener.local_addr().map_err(CollectorError::LogWrite)?;
        addrs.push((l.onion_address.clone(), addr));
        let onion = l.onion_address.clone();
        let stopping = Arc::clone(&stopping);
        let log_tx = log_tx.clone();
        let connections = Arc::clone(&connections);
        let max = cfg.max_request_bytes;
        acceptors.push(thread::spawn(move || {
            for stream in listener.incoming() {
                if stopping.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let onion = onion.clone();
                let log_tx = log_tx.clone();
                let t = thread::spawn(move || handle_connection(stream, &onion, max, &log_tx));
                let mut conns = connections.lock().expect("lock");
                conns.retain(|h| !h.is_finished());
                conns.push(t);
            }
        }));
    }
    Ok(CollectorHandle {
        addrs,
        bind_errors,
        stopping,
        acceptors,
        log_tx: Some(log_tx),
        writer: Some(writer),
        events_tx,
        events_rx,
        connections,
    })
}

/// Runs until SIGINT/SIGTERM or a log failure, flushing the log on the way out.
pub fn serve(cfg: &CollectorConfig) -> Result<(), CollectorError> {
    let handle = start(cfg)?;
    if handle.addresses().is_empty() && !cfg.listeners.is_empty() {
        return Err(handle.bind_errors.into_iter().next().expect("at least one bind error"));
    }
    for (onion, addr) in handle.addresses() {
        log::info!("serving {onion} on {addr}");
    }
    let stop = handle.stop_signal();
    ctrlc::set_handler(stop).map_err(|e| CollectorError::Config(format!("signal handler: {e}")))?;
    handle.wait()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    /// Fail on the first bad line.
    Strict,
    /// Skip bad lines and report them.
    Skip,
}

#[derive(Debug, Default)]
pub struct ParsedLog {
    pub visits: Vec<VisitRecord>,
    /// `(line number, message)` of skipped lines.
    pub errors: Vec<(usize, String)>,
}

/// Reads a collector (or simulator) visit log. Requester tags are left empty.
pub fn parse_collector_log(path: &Path, mode: ParseMode) -> Result<ParsedLog, CollectorError> {
    let (mut visits, errors) = read_jsonl_lenient::<VisitRecord>(path)?;
    let errors: Vec<(usize, String)> = errors
        .into_iter()
        .map(|e| match e {
            JsonlError::Parse { line, message } => (line, message),
            other => (0, other.to_string()),
        })
        .collect();
    if mode == ParseMode::Strict {
        if let Some((line, message)) = errors.first() {
            return Err(CollectorError::Parse {
                path: path.display().to_string(),
                line: *line,
                message: message.clone(),
            });
        }
    }
    for v in &mut visits {
        v.requester_tag.clear();
    }
    Ok(ParsedLog { visits, errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_parsing() {
        let r = parse_request(b"GET /a?b=1 HTTP/1.1\r\nHost: x.onion\r\nUser-Agent: t\r\n\r\n").unwrap();
        assert_eq!(r.path, "/a?b=1");
        assert_eq!(r.headers, vec![("Host".into(), "x.onion".into()), ("User-Agent".into(), "t".into())]);
        assert_eq!(parse_request(b"GET http://x.onion/p HTTP/1.0\r\n\r\n").unwrap().path, "/p");
        assert!(parse_request(b"garbage\r\n\r\n").is_none());
        assert!(parse_request(b"GET / HTTP/9.9\r\n\r\n").is_none());
        assert!(parse_request(b"GET / HTTP/1.1\r\nno colon here\r\n\r\n").is_none());
        assert!(parse_request(b"get / HTTP/1.1\r\n\r\n").is_none());
        assert!(parse_request(&[0xff, 0xfe, b'\r', b'\n']).is_none());
    }

    #[test]
    fn truncated_heads_keep_complete_lines() {
        let head = b"GET /x HTTP/1.1\r\nA: 1\r\nB: 22222";
        let (line, ok) = log_line_for("h", head, true);
        assert!(ok);
        assert!(line.truncated);
        assert_eq!(line.headers, vec![("A".to_string(), "1".to_string())]);
    }

    #[test]
    fn log_line_reads_as_visit() {
        let (line, _) = log_line_for("abc", b"GET /favicon.ico HTTP/1.1\r\n\r\n", false);
        let v: VisitRecord = serde_json::from_str(&serde_json::to_string(&line).unwrap()).unwrap();
        assert_eq!(v.request_path, "/favicon.ico");
        assert!(v.is_favicon);
        assert_eq!(v.onion_address, "abc");
        assert!(line.received_at.ends_with('Z') && line.received_at.contains('.'));
    }

    #[test]
    fn duplicate_ports_rejected() {
        let l = |p| ListenerConfig {
            port: p,
            onion_address: "a".into(),
        };
        let cfg = CollectorConfig::new(vec![l(9000), l(9000)], "/tmp/x");
        assert!(matches!(cfg.validate(), Err(CollectorError::Config(_))));
        let cfg = CollectorConfig::new(vec![l(0), l(0)], "/tmp/x");
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn parse_modes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(parse_collector_log(&path, ParseMode::Strict).unwrap().visits.is_empty());

        let mut body = String::new();
        for i in 0..100 {
            if i == 37 {
                body.push_str("{\"onion_address\": truncated\n");
            } else {
                let (line, _) = log_line_for("h", format!("GET /{i} HTTP/1.1\r\n\r\n").as_bytes(), false);
                body.push_str(&serde_json::to_string(&line).unwrap());
                body.push('\n');
            }
        }
        std::fs::write(&path, body).unwrap();
        let parsed = parse_collector_log(&path, ParseMode::Skip).unwrap();
        assert_eq!(parsed.visits.len(), 99);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].0, 38);
        match parse_collector_log(&path, ParseMode::Strict) {
            Err(CollectorError::Parse { line: 38, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
