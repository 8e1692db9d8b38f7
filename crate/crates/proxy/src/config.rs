use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::time::Duration;

use parsegap::http::MAX_REQUEST_BYTES;
use parsegap::normalizer::{NormalizerPolicy, PolicyError};
use thiserror::Error;

pub const DEFAULT_REJECT_STATUS: u16 = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyConfig {
    pub listen: String,
    pub upstream: String,
    pub policy: NormalizerPolicy,
    /// Bodies declared larger than this are refused with 413 before they are
    /// read.
    pub max_body_bytes: usize,
    /// Decision log; `None` discards records.
    pub log_path: Option<PathBuf>,
    pub reject_status: u16,
    pub idle_timeout: Duration,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("listen address {0} is also the upstream address")]
    SameAddress(String),
    #[error("max-body-bytes must be between 1 and {MAX_REQUEST_BYTES}, got {0}")]
    BodyLimit(usize),
    #[error("reject status must be a 4xx code, got {0}")]
    RejectStatus(u16),
    #[error("cannot resolve {0}")]
    Address(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl ProxyConfig {
    pub fn new(listen: impl Into<String>, upstream: impl Into<String>) -> Self {
        let policy = NormalizerPolicy::default();
        Self {
            listen: listen.into(),
            upstream: upstream.into(),
            max_body_bytes: policy.max_body_bytes,
            policy,
            log_path: None,
            reject_status: DEFAULT_REJECT_STATUS,
            idle_timeout: Duration::from_secs(30),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy.validate()?;
        if self.max_body_bytes == 0 || self.max_body_bytes > MAX_REQUEST_BYTES {
            return Err(ConfigError::BodyLimit(self.max_body_bytes));
        }
        if !(400..500).contains(&self.reject_status) {
            return Err(ConfigError::RejectStatus(self.reject_status));
        }
        let listen = resolve(&self.listen)?;
        let upstream = resolve(&self.upstream)?;
        let clash = listen
            .iter()
            .filter(|a| a.port() != 0)
            .any(|a| upstream.iter().any(|u| u == a || (u.port() == a.port() && (u.ip().is_unspecified() || a.ip().is_unspecified()))));
        if clash {
            return Err(ConfigError::SameAddress(self.listen.clone()));
        }
        Ok(())
    }
}

fn resolve(addr: &str) -> Result<Vec<SocketAddr>, ConfigError> {
    addr.to_socket_addrs()
        .map(|it| it.collect())
        .map_err(|_| ConfigError::Address(addr.to_string()))
}
