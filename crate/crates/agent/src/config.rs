//! TOML configuration of one site agent.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fabric_core::auth::Secret;
use fabric_core::domain::{KeyId, SiteId, UserId};

use crate::runner::PacRunnerSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("key {0}: exactly one of `secret` or `secret_file` is required")]
    Secret(KeyId),
}

/// A credential the agent accepts. The secret is given inline or in a file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyConfig {
    pub user: UserId,
    pub key_id: KeyId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_file: Option<PathBuf>,
}

impl KeyConfig {
    pub fn inline(user: impl Into<UserId>, key_id: KeyId, secret: &Secret) -> Self {
        KeyConfig {
            user: user.into(),
            key_id,
            secret: Some(secret.expose().to_string()),
            secret_file: None,
        }
    }

    pub fn load_secret(&self) -> Result<Secret, ConfigError> {
        match (&self.secret, &self.secret_file) {
            (Some(s), None) => Ok(Secret::new(s.clone())),
            (None, Some(f)) => fs::read_to_string(f)
                .map(|s| Secret::new(s.trim().to_string()))
                .map_err(|source| ConfigError::Read { path: f.clone(), source }),
            _ => Err(ConfigError::Secret(self.key_id.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub site_id: SiteId,
    pub listen: SocketAddr,
    /// Dataset locators resolve under this directory.
    pub data_root: PathBuf,
    pub work_dir: PathBuf,
    /// Holds the dataset catalog.
    pub state_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// The only principal allowed to submit steps and terminate tasks.
    pub middleware: KeyConfig,
    /// Data owners who register and grant datasets on this site.
    #[serde(default)]
    pub owners: Vec<KeyConfig>,
    #[serde(default)]
    pub runner: PacRunnerSpec,
}

fn default_parallelism() -> usize {
    4
}

impl AgentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: AgentConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_root);
        fix(&mut self.work_dir);
        fix(&mut self.state_dir);
        for key in std::iter::once(&mut self.middleware).chain(self.owners.iter_mut()) {
            if let Some(f) = key.secret_file.as_mut() {
                fix(f);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("agent config serializes")
    }
}
