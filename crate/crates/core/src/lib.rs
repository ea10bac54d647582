//! Core of a self-contained multilingual voice social network node: voice
//! posts are transcribed, logged on an embedded hash-chained ledger, and
//! delivered to followers in their own language as text and speech.

pub mod config;
pub mod crypto;
pub mod engine;
pub mod error;
pub mod hexfmt;
pub mod identity;
pub mod lang;
pub mod ledger;
pub mod media;
pub mod metrics;
pub mod node;
pub mod posts;
pub mod storage;

pub use config::{ConfigError, Mode, NodeConfig};
pub use error::{Error, ErrorKind, Result};
pub use node::Node;

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
