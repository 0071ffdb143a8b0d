//! TOML configuration of the middleware.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fabric_agent::config::KeyConfig;
use fabric_core::domain::{SiteId, UserId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteEndpoint {
    pub site_id: SiteId,
    /// Base URL of the site's agent, e.g. `http://10.0.0.5:7101`.
    pub endpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiddlewareConfig {
    pub listen: SocketAddr,
    pub state_dir: PathBuf,
    /// Bootstrap administrator created on first start.
    #[serde(default = "default_admin")]
    pub admin: UserId,
    #[serde(default = "default_site_concurrency")]
    pub site_concurrency: usize,
    /// Per-request timeout for agent calls, which covers a whole step.
    #[serde(default = "default_step_timeout")]
    pub step_timeout_seconds: u64,
    /// The credential used toward every agent. Its key id is what a
    /// workflow's `credential_ref` names.
    pub das: KeyConfig,
    #[serde(default)]
    pub sites: Vec<SiteEndpoint>,
}

fn default_admin() -> UserId {
    UserId::new("admin")
}

fn default_site_concurrency() -> usize {
    fabric_core::tasks::DEFAULT_SITE_CONCURRENCY
}

fn default_step_timeout() -> u64 {
    600
}

impl MiddlewareConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: MiddlewareConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.state_dir.is_relative() {
            cfg.state_dir = base.join(&cfg.state_dir);
        }
        if let Some(f) = cfg.das.secret_file.as_mut() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("middleware config serializes")
    }
}
