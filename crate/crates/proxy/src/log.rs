use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use parsegap::normalizer::ChangeKind;
use serde::{Deserialize, Serialize};

/// One line of the decision log: what happened to one inbound request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Milliseconds since the Unix epoch.
    pub timestamp: u128,
    pub client: String,
    pub method: String,
    pub target: String,
    /// `normalized`, `rejected` or `passed-through`.
    pub outcome: String,
    pub reason: Option<String>,
    pub changes: Vec<ChangeKind>,
    /// Status sent to the client.
    pub status: u16,
    pub bytes_in: usize,
    /// Octets forwarded upstream.
    pub bytes_out: usize,
    pub upstream_error: Option<String>,
}

impl LogRecord {
    pub fn new(client: impl Into<String>) -> Self {
        Self {
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or_default(),
            client: client.into(),
            method: String::new(),
            target: String::new(),
            outcome: String::new(),
            reason: None,
            changes: Vec::new(),
            status: 0,
            bytes_in: 0,
            bytes_out: 0,
            upstream_error: None,
        }
    }
}

/// Append-only sink shared by every connection.
pub struct DecisionLog {
    sink: Mutex<Option<File>>,
}

impl DecisionLog {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            sink: Mutex::new(Some(file)),
        })
    }

    pub fn discard() -> Self {
        Self { sink: Mutex::new(None) }
    }

    pub fn append(&self, record: &LogRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut guard = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        match guard.as_mut() {
            Some(file) => file.write_all(&line),
            None => Ok(()),
        }
    }
}
