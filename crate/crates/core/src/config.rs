//! Node configuration: a flat `key = value` file, where every key can be
//! overridden by an environment variable `VNODE_<KEY>` (upper-cased).

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::ledger::{BlockPolicy, GasSchedule};
use crate::media::WavLimits;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("emergency mode refuses remote dependency {0:?}")]
    RemoteInEmergency(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Normal,
    Emergency,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Normal => "normal",
            Mode::Emergency => "emergency",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineConfig {
    Mock,
    External(PathBuf),
}

/// Argon2id cost parameters for password records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for KdfParams {
    fn default() -> Self {
        KdfParams { memory_kib: 19 * 1024, iterations: 2, parallelism: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub bind_addr: SocketAddr,
    pub data_dir: PathBuf,
    pub mode: Mode,
    pub engine: EngineConfig,
    pub engine_timeout: Duration,
    pub gas_price_wei: u64,
    pub session_ttl: Duration,
    pub max_wav_bytes: usize,
    pub max_wav_seconds: u64,
    pub max_picture_bytes: usize,
    pub block_policy: BlockPolicy,
    pub kdf: KdfParams,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            bind_addr: "0.0.0.0:8080".parse().expect("literal address"),
            data_dir: PathBuf::from("vnode-data"),
            mode: Mode::Normal,
            engine: EngineConfig::Mock,
            engine_timeout: crate::engine::DEFAULT_TIMEOUT,
            gas_price_wei: GasSchedule::default().gas_price_wei,
            session_ttl: Duration::from_secs(24 * 3600),
            max_wav_bytes: 10 * 1024 * 1024,
            max_wav_seconds: 120,
            max_picture_bytes: 2 * 1024 * 1024,
            block_policy: BlockPolicy::Immediate,
            kdf: KdfParams::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "bind_addr",
    "data_dir",
    "mode",
    "engine",
    "engine_timeout_s",
    "gas_price_wei",
    "session_ttl_s",
    "max_wav_bytes",
    "max_wav_seconds",
    "max_picture_bytes",
    "block_policy",
    "kdf_memory_kib",
    "kdf_iterations",
    "kdf_parallelism",
];

fn positive<T: FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<T, ConfigError> {
    match value.parse::<T>() {
        Ok(v) if v > T::default() => Ok(v),
        Ok(_) => Err(ConfigError::Invalid { key: key.into(), reason: "must be greater than zero".into() }),
        Err(_) => Err(ConfigError::Invalid { key: key.into(), reason: format!("not a number: {value:?}") }),
    }
}

/// True when `s` names something reached over the network rather than a
/// local file.
fn looks_remote(s: &str) -> bool {
    s.contains("://") || s.starts_with("//") || s.starts_with("\\\\")
}

/// Parses a flat `key = value` document; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl NodeConfig {
    /// Loads `path` (if given), then applies `VNODE_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                parse_pairs(&text)?
            }
            None => BTreeMap::new(),
        };
        for key in KEYS {
            if let Ok(v) = std::env::var(format!("VNODE_{}", key.to_uppercase())) {
                pairs.insert(key.to_string(), v);
            }
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut c = NodeConfig::default();
        for (key, value) in pairs {
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |reason: String| ConfigError::Invalid { key: key.into(), reason };
        match key {
            "bind_addr" => {
                self.bind_addr = value.parse().map_err(|e| invalid(format!("{e}")))?;
            }
            "data_dir" => {
                if value.is_empty() {
                    return Err(invalid("must not be empty".into()));
                }
                self.data_dir = PathBuf::from(value);
            }
            "mode" => {
                self.mode = match value {
                    "normal" => Mode::Normal,
                    "emergency" => Mode::Emergency,
                    _ => return Err(invalid("expected normal or emergency".into())),
                }
            }
            "engine" => {
                self.engine = match value {
                    "mock" => EngineConfig::Mock,
                    _ => match value.strip_prefix("external:") {
                        Some(path) if !path.is_empty() => EngineConfig::External(PathBuf::from(path)),
                        _ => return Err(invalid("expected mock or external:<path>".into())),
                    },
                }
            }
            "engine_timeout_s" => self.engine_timeout = Duration::from_secs(positive(key, value)?),
            "gas_price_wei" => self.gas_price_wei = positive(key, value)?,
            "session_ttl_s" => self.session_ttl = Duration::from_secs(positive(key, value)?),
            "max_wav_bytes" => self.max_wav_bytes = positive(key, value)?,
            "max_wav_seconds" => self.max_wav_seconds = positive(key, value)?,
            "max_picture_bytes" => self.max_picture_bytes = positive(key, value)?,
            "block_policy" => {
                self.block_policy = match value {
                    "immediate" => BlockPolicy::Immediate,
                    _ => match value.strip_prefix("batch:") {
                        Some(ms) => BlockPolicy::Batch { interval: Duration::from_millis(positive(key, ms)?) },
                        None => return Err(invalid("expected immediate or batch:<ms>".into())),
                    },
                }
            }
            "kdf_memory_kib" => self.kdf.memory_kib = positive(key, value)?,
            "kdf_iterations" => self.kdf.iterations = positive(key, value)?,
            "kdf_parallelism" => self.kdf.parallelism = positive(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Checks cross-field rules; called by the loaders.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let EngineConfig::External(path) = &self.engine {
            let text = path.to_string_lossy();
            if looks_remote(&text) {
                if self.mode == Mode::Emergency {
                    return Err(ConfigError::RemoteInEmergency(text.into_owned()));
                }
                return Err(ConfigError::Invalid { key: "engine".into(), reason: "must be a local executable".into() });
            }
            if !path.is_file() {
                return Err(ConfigError::Invalid {
                    key: "engine".into(),
                    reason: format!("{} does not exist", path.display()),
                });
            }
        }
        if looks_remote(&self.data_dir.to_string_lossy()) {
            if self.mode == Mode::Emergency {
                return Err(ConfigError::RemoteInEmergency(self.data_dir.display().to_string()));
            }
            return Err(ConfigError::Invalid { key: "data_dir".into(), reason: "must be a local path".into() });
        }
        self.kdf_params().map_err(|reason| ConfigError::Invalid { key: "kdf_memory_kib".into(), reason })?;
        self.gas_schedule().validate().map_err(|reason| ConfigError::Invalid { key: "gas_price_wei".into(), reason })
    }

    pub fn gas_schedule(&self) -> GasSchedule {
        GasSchedule { gas_price_wei: self.gas_price_wei, ..GasSchedule::default() }
    }

    pub fn wav_limits(&self) -> WavLimits {
        WavLimits { max_bytes: self.max_wav_bytes, max_duration_ms: self.max_wav_seconds * 1000 }
    }

    fn kdf_params(&self) -> Result<argon2::Params, String> {
        argon2::Params::new(self.kdf.memory_kib, self.kdf.iterations, self.kdf.parallelism, Some(32))
            .map_err(|e| e.to_string())
    }
}
