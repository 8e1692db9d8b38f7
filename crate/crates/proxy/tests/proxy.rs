use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use parsegap_proxy::{read_response, LogRecord, Proxy, ProxyConfig, RequestReader};

const MESSY_UPLOAD: &[u8] = include_bytes!("../../core/tests/fixtures/messy-upload.http");
const CANONICAL_UPLOAD: &[u8] = include_bytes!("../../core/tests/fixtures/canonical-upload.http");
const CONTINUATION_ATTACK: &[u8] = include_bytes!("../../core/tests/fixtures/continuation-attack.http");

type Seen = Arc<Mutex<Vec<Vec<u8>>>>;

/// Upstream that answers every request with its own bytes as the body.
fn echo_upstream() -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let seen: Seen = Arc::default();
    let record = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let record = record.clone();
            thread::spawn(move || {
                let mut reader = RequestReader::new(stream.try_clone().unwrap());
                while let Ok(Some(req)) = reader.next_request(1 << 24) {
                    record.lock().unwrap().push(req.clone());
                    let mut resp = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n", req.len()).into_bytes();
                    resp.extend_from_slice(&req);
                    if stream.write_all(&resp).is_err() {
                        break;
                    }
                }
            });
        }
    });
    (addr, seen)
}

struct Running {
    addr: String,
    seen: Seen,
    log_path: std::path::PathBuf,
    _dir: tempfile::TempDir,
}

impl Running {
    fn records(&self) -> Vec<LogRecord> {
        std::fs::read_to_string(&self.log_path)
            .unwrap_or_default()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

fn start_with(upstream: Option<String>, tweak: impl FnOnce(&mut ProxyConfig)) -> Running {
    let (up, seen) = match upstream {
        Some(addr) => (addr, Seen::default()),
        None => echo_upstream(),
    };
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("decisions.jsonl");
    let mut cfg = ProxyConfig::new("127.0.0.1:0", up);
    cfg.log_path = Some(log_path.clone());
    cfg.idle_timeout = Duration::from_secs(5);
    tweak(&mut cfg);
    let proxy = Proxy::bind(cfg).unwrap();
    let addr = proxy.local_addr().to_string();
    let _ = proxy.spawn();
    Running {
        addr,
        seen,
        log_path,
        _dir: dir,
    }
}

fn start() -> Running {
    start_with(None, |_| {})
}

fn send(addr: &str, bytes: &[u8]) -> (Vec<u8>, TcpStream) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(bytes).unwrap();
    let resp = read_response(s.try_clone().unwrap(), b"POST").unwrap();
    (resp.bytes, s)
}

fn body_of(resp: &[u8]) -> &[u8] {
    let at = resp.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    &resp[at + 4..]
}

fn wait_for_records(p: &Running, n: usize) -> Vec<LogRecord> {
    for _ in 0..100 {
        let recs = p.records();
        if recs.len() >= n {
            return recs;
        }
        thread::sleep(Duration::from_millis(20));
    }
    p.records()
}

#[test]
fn messy_upload_reaches_upstream_canonical() {
    let p = start();
    let (resp, _) = send(&p.addr, MESSY_UPLOAD);
    assert!(resp.starts_with(b"HTTP/1.1 200 OK"));
    assert_eq!(body_of(&resp), CANONICAL_UPLOAD);
    assert_eq!(*p.seen.lock().unwrap(), vec![CANONICAL_UPLOAD.to_vec()]);
    let recs = wait_for_records(&p, 1);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].outcome, "normalized");
    assert_eq!(recs[0].status, 200);
    assert_eq!((recs[0].bytes_in, recs[0].bytes_out), (MESSY_UPLOAD.len(), CANONICAL_UPLOAD.len()));
    assert!(!recs[0].changes.is_empty());
}

#[test]
fn continuation_attack_never_reaches_upstream() {
    let p = start();
    let (resp, _) = send(&p.addr, CONTINUATION_ATTACK);
    assert!(resp.starts_with(b"HTTP/1.1 400 "), "{}", String::from_utf8_lossy(&resp));
    assert!(String::from_utf8_lossy(body_of(&resp)).contains("DeprecatedFeature"));
    assert!(p.seen.lock().unwrap().is_empty());
    let recs = wait_for_records(&p, 1);
    assert_eq!(recs[0].outcome, "rejected");
    assert_eq!(recs[0].reason.as_deref(), Some("DeprecatedFeature"));
    assert_eq!(recs[0].bytes_out, 0);
}

#[test]
fn canonical_request_is_forwarded_unchanged() {
    let p = start();
    let (resp, _) = send(&p.addr, CANONICAL_UPLOAD);
    assert_eq!(body_of(&resp), CANONICAL_UPLOAD);
    let recs = wait_for_records(&p, 1);
    assert_eq!(recs[0].outcome, "normalized");
    assert!(recs[0].changes.is_empty());
}

#[test]
fn custom_reject_status() {
    let p = start_with(None, |c| c.reject_status = 403);
    let (resp, _) = send(&p.addr, CONTINUATION_ATTACK);
    assert!(resp.starts_with(b"HTTP/1.1 403 "));
}

#[test]
fn oversized_body_gets_413() {
    let p = start_with(None, |c| c.max_body_bytes = 16);
    let (resp, mut s) = send(&p.addr, MESSY_UPLOAD);
    assert!(resp.starts_with(b"HTTP/1.1 413 "));
    assert!(p.seen.lock().unwrap().is_empty());
    let mut rest = Vec::new();
    assert_eq!(s.read_to_end(&mut rest).unwrap(), 0);
    assert_eq!(wait_for_records(&p, 1)[0].reason.as_deref(), Some("BodyTooLarge"));
}

#[test]
fn unreachable_upstream_gets_502() {
    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = closed.local_addr().unwrap().to_string();
    drop(closed);
    let p = start_with(Some(dead), |_| {});
    let (resp, _) = send(&p.addr, CANONICAL_UPLOAD);
    assert!(resp.starts_with(b"HTTP/1.1 502 "));
    let recs = wait_for_records(&p, 1);
    assert_eq!(recs[0].status, 502);
    assert!(recs[0].upstream_error.is_some());
}

#[test]
fn keep_alive_serves_sequential_requests() {
    let p = start();
    let (first, mut s) = send(&p.addr, CANONICAL_UPLOAD);
    assert_eq!(body_of(&first), CANONICAL_UPLOAD);
    s.write_all(MESSY_UPLOAD).unwrap();
    let second = read_response(s.try_clone().unwrap(), b"POST").unwrap();
    assert_eq!(body_of(&second.bytes), CANONICAL_UPLOAD);
    s.write_all(CONTINUATION_ATTACK).unwrap();
    let third = read_response(s.try_clone().unwrap(), b"POST").unwrap();
    assert!(third.bytes.starts_with(b"HTTP/1.1 400 "));
    assert_eq!(p.seen.lock().unwrap().len(), 2);
    assert_eq!(wait_for_records(&p, 3).len(), 3);
}

#[test]
fn pipelined_second_request_closes_connection() {
    let p = start();
    let mut both = CANONICAL_UPLOAD.to_vec();
    both.extend_from_slice(CANONICAL_UPLOAD);
    let (first, mut s) = send(&p.addr, &both);
    assert_eq!(body_of(&first), CANONICAL_UPLOAD);
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    assert!(rest.is_empty());
    assert_eq!(p.seen.lock().unwrap().len(), 1);
    assert_eq!(wait_for_records(&p, 1).len(), 1);
}

#[test]
fn unknown_content_type_passes_through() {
    let p = start();
    let req = b"POST /x HTTP/1.1\r\nHost: a\r\nContent-Type: text/csv\r\nContent-Length: 3\r\n\r\na,b";
    let (resp, _) = send(&p.addr, req);
    assert_eq!(body_of(&resp), req);
    assert_eq!(wait_for_records(&p, 1)[0].outcome, "passed-through");
}

#[test]
fn shutdown_stops_accepting() {
    let (up, _) = echo_upstream();
    let proxy = Proxy::bind(ProxyConfig::new("127.0.0.1:0", up)).unwrap();
    let addr = proxy.local_addr();
    let (handle, join) = proxy.spawn();
    handle.shutdown();
    join.join().unwrap().unwrap();
    let refused = TcpStream::connect(addr).map(|s| {
        let _ = s.shutdown(Shutdown::Both);
    });
    assert!(refused.is_err());
}
