use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use parsegap::http::parse_raw_request;
use parsegap::normalizer::{normalize, NormalizationOutcome};
use parsegap::reject::{RejectCategory, RejectReason};
use thiserror::Error;

use crate::config::{ConfigError, ProxyConfig};
use crate::log::{DecisionLog, LogRecord};
use crate::message::{read_response, ReadError, RequestReader};

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot open log {path}: {source}")]
    Log { path: String, source: io::Error },
    #[error("accept failed: {0}")]
    Accept(io::Error),
}

/// A bound proxy that has not started accepting yet.
pub struct Proxy {
    listener: TcpListener,
    cfg: Arc<ProxyConfig>,
    log: Arc<DecisionLog>,
    stop: Arc<AtomicBool>,
}

/// Stops a running [`Proxy`] from another thread.
#[derive(Clone)]
pub struct ShutdownHandle {
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

impl Proxy {
    pub fn bind(cfg: ProxyConfig) -> Result<Self, ProxyError> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen).map_err(|source| ProxyError::Bind {
            addr: cfg.listen.clone(),
            source,
        })?;
        let log = match &cfg.log_path {
            Some(path) => DecisionLog::open(path).map_err(|source| ProxyError::Log {
                path: path.display().to_string(),
                source,
            })?,
            None => DecisionLog::discard(),
        };
        Ok(Self {
            listener,
            cfg: Arc::new(cfg),
            log: Arc::new(log),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle {
            stop: self.stop.clone(),
            addr: self.local_addr(),
        }
    }

    /// Accepts connections until shut down, one thread per connection.
    pub fn serve(self) -> Result<(), ProxyError> {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionAborted | io::ErrorKind::ConnectionReset) => {
                    continue
                }
                Err(e) => return Err(ProxyError::Accept(e)),
            };
            let cfg = self.cfg.clone();
            let log = self.log.clone();
            thread::spawn(move || {
                let _ = handle_connection(stream, &cfg, &log);
            });
        }
        Ok(())
    }

    /// Runs [`Proxy::serve`] on a background thread.
    pub fn spawn(self) -> (ShutdownHandle, thread::JoinHandle<Result<(), ProxyError>>) {
        let handle = self.shutdown_handle();
        (handle, thread::spawn(move || self.serve()))
    }
}

pub fn serve(cfg: ProxyConfig) -> Result<(), ProxyError> {
    Proxy::bind(cfg)?.serve()
}

fn reason_phrase(status: u16) -> &'static str {
    match status {
        400 => "Bad Request",
        403 => "Forbidden",
        413 => "Content Too Large",
        422 => "Unprocessable Content",
        502 => "Bad Gateway",
        _ => "Error",
    }
}

fn error_response(status: u16, body: &str, close: bool) -> Vec<u8> {
    let mut out = format!(
        "HTTP/1.1 {status} {}\r\nContent-Type: text/plain; charset=utf-8\r\nContent-Length: {}\r\n",
        reason_phrase(status),
        body.len()
    );
    if close {
        out.push_str("Connection: close\r\n");
    }
    out.push_str("\r\n");
    out.push_str(body);
    out.into_bytes()
}

fn rejection_body(reason: &RejectReason) -> String {
    format!("request rejected: {}\n{}\n", reason.category, reason.detail)
}

fn wants_close(raw: &[u8]) -> bool {
    parse_raw_request(raw).is_ok_and(|r| {
        r.headers_named("connection")
            .any(|h| h.value.split(|&b| b == b',').any(|t| t.trim_ascii().eq_ignore_ascii_case(b"close")))
    })
}

fn handle_connection(client: TcpStream, cfg: &ProxyConfig, log: &DecisionLog) -> io::Result<()> {
    let peer = client.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    client.set_read_timeout(Some(cfg.idle_timeout))?;
    let mut writer = client.try_clone()?;
    let mut reader = RequestReader::new(client);
    loop {
        let raw = match reader.next_request(cfg.max_body_bytes) {
            Ok(Some(raw)) => raw,
            Ok(None) | Err(ReadError::Io(_)) => break,
            Err(ReadError::Refused { status, reason, bytes_in }) => {
                let mut rec = LogRecord::new(&peer);
                rec.outcome = "rejected".into();
                rec.reason = Some(reason.category.to_string());
                rec.status = status;
                rec.bytes_in = bytes_in;
                let _ = log.append(&rec);
                writer.write_all(&error_response(status, &rejection_body(&reason), true))?;
                break;
            }
        };
        let pipelined = reader.has_buffered();
        let close = pipelined || wants_close(&raw);
        let (response, upstream_closed) = handle_request(&raw, &peer, cfg, log, close);
        writer.write_all(&response)?;
        if close || upstream_closed {
            break;
        }
    }
    let _ = writer.shutdown(Shutdown::Both);
    Ok(())
}

/// Normalizes one request, forwards it when allowed and returns the bytes
/// for the client plus whether the connection must close.
fn handle_request(raw: &[u8], peer: &str, cfg: &ProxyConfig, log: &DecisionLog, closing: bool) -> (Vec<u8>, bool) {
    let mut rec = LogRecord::new(peer);
    rec.bytes_in = raw.len();
    let req = match parse_raw_request(raw) {
        Ok(r) => r,
        Err(e) => {
            let reason = RejectReason::new(RejectCategory::MalformedHeader, e.message);
            rec.outcome = "rejected".into();
            rec.reason = Some(reason.category.to_string());
            rec.status = cfg.reject_status;
            let _ = log.append(&rec);
            return (error_response(cfg.reject_status, &rejection_body(&reason), true), true);
        }
    };
    rec.method = String::from_utf8_lossy(&req.method).into_owned();
    rec.target = String::from_utf8_lossy(&req.target).into_owned();
    let outcome = normalize(&req, &cfg.policy);
    rec.outcome = outcome.label().into();
    let forward = match outcome {
        NormalizationOutcome::Normalized { request, changes } => {
            rec.changes = changes.iter().map(|c| c.kind).collect();
            request.serialize(false)
        }
        NormalizationOutcome::PassedThrough(why) => {
            rec.reason = Some(why);
            raw.to_vec()
        }
        NormalizationOutcome::Rejected(reason) => {
            rec.reason = Some(reason.category.to_string());
            rec.status = cfg.reject_status;
            let _ = log.append(&rec);
            return (error_response(cfg.reject_status, &rejection_body(&reason), closing), false);
        }
    };
    let result = TcpStream::connect(&cfg.upstream).and_then(|mut up| {
        up.set_read_timeout(Some(cfg.idle_timeout))?;
        up.write_all(&forward)?;
        read_response(up, &req.method)
    });
    rec.bytes_out = forward.len();
    let reply = match result {
        Ok(resp) => {
            rec.status = resp.status;
            (resp.bytes, resp.until_close)
        }
        Err(e) => {
            rec.status = 502;
            rec.upstream_error = Some(e.to_string());
            (error_response(502, "upstream unavailable\n", true), true)
        }
    };
    let _ = log.append(&rec);
    reply
}
