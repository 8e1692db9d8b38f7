//! Normalizing HTTP/1.1 reverse proxy: every inbound request is rewritten
//! into canonical form or refused before anything reaches the upstream.

mod config;
mod log;
mod message;
mod server;

pub use config::{ConfigError, ProxyConfig, DEFAULT_REJECT_STATUS};
pub use log::{DecisionLog, LogRecord};
pub use message::{read_response, ReadError, RelayedResponse, RequestReader, MAX_HEAD_BYTES};
pub use server::{serve, Proxy, ProxyError, ShutdownHandle};
