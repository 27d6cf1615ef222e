//! Service configuration: a TOML file plus environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

pub const BIND_ENV: &str = "EFFMARKET_BIND";
pub const LOG_DIR_ENV: &str = "EFFMARKET_LOG_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: SocketAddr,
    /// Directory holding one `<room>.jsonl` log per room.
    pub log_dir: PathBuf,
    pub max_rooms: usize,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            log_dir: PathBuf::from("logs"),
            max_rooms: 1000,
        }
    }
}

impl ServiceSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Reads `path` if given, then applies the environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let settings = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        settings.with_overrides(|key| std::env::var(key).ok())
    }

    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(bind) = lookup(BIND_ENV) {
            self.bind = bind
                .parse()
                .map_err(|e| ServiceError::Config(format!("{BIND_ENV}={bind}: {e}")))?;
        }
        if let Some(dir) = lookup(LOG_DIR_ENV) {
            self.log_dir = PathBuf::from(dir);
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_environment() {
        let s = ServiceSettings::from_toml("bind = \"0.0.0.0:9000\"\nlog_dir = \"/var/rooms\"\n").unwrap();
        assert_eq!(s.bind.port(), 9000);
        assert_eq!(s.max_rooms, 1000);
        let s = s
            .with_overrides(|k| (k == LOG_DIR_ENV).then(|| "/tmp/x".to_string()))
            .unwrap();
        assert_eq!(s.log_dir, PathBuf::from("/tmp/x"));
        assert_eq!(s.bind.port(), 9000);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_addresses() {
        assert!(ServiceSettings::from_toml("port = 3").is_err());
        let bad = ServiceSettings::default().with_overrides(|k| (k == BIND_ENV).then(|| "nowhere".into()));
        assert!(bad.is_err());
    }
}
