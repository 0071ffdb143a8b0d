//! Wiring of auth, repository, task manager and agent transport.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::os::unix::fs::OpenOptionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use fabric_agent::config::ConfigError as KeyError;
use fabric_agent::AgentClient;
use fabric_core::auth::{AuthError, AuthService, RequestSigner};
use fabric_core::domain::{KeyId, Principal, SiteId};
use fabric_core::repo::{RepoError, RepoStore};
use fabric_core::tasks::{TaskError, TaskManager, TaskManagerConfig};

use crate::config::MiddlewareConfig;

pub const ADMIN_KEY_ID_FILE: &str = "admin.key_id";
pub const ADMIN_SECRET_FILE: &str = "admin.secret";

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("state directory: {0}")]
    Io(#[from] std::io::Error),
}

/// The middleware's long-lived state, shared by every request handler.
pub struct Fabric {
    pub auth: Arc<AuthService>,
    pub repo: Arc<RepoStore>,
    pub tasks: TaskManager,
    pub agents: Arc<AgentClient>,
    pub sites: BTreeSet<SiteId>,
    state_dir: PathBuf,
}

fn write_private(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(text.as_bytes())
}

impl Fabric {
    /// Opens or creates the state directory and starts the dispatcher.
    /// Must run inside a tokio runtime.
    pub fn open(cfg: &MiddlewareConfig) -> Result<Self, StartError> {
        fs::create_dir_all(&cfg.state_dir)?;
        let auth = Arc::new(AuthService::open(cfg.state_dir.join("auth.json"))?);
        if let Some((key_id, secret)) = auth.bootstrap(&cfg.admin)? {
            // Handed over once through files only the operator can read.
            write_private(&cfg.state_dir.join(ADMIN_KEY_ID_FILE), key_id.as_str())?;
            write_private(&cfg.state_dir.join(ADMIN_SECRET_FILE), secret.expose())?;
        }
        let das_secret = cfg.das.load_secret()?;
        if auth.principal(&cfg.das.user).is_none() {
            auth.install_principal(Principal::new(cfg.das.user.clone(), []));
        }
        auth.install_key(cfg.das.key_id.clone(), &das_secret, cfg.das.user.clone());
        let repo = Arc::new(RepoStore::open(cfg.state_dir.join("repo"), auth.clone())?);
        let agents = Arc::new(AgentClient::new());
        let timeout = Duration::from_secs(cfg.step_timeout_seconds);
        for site in &cfg.sites {
            agents.add(
                site.site_id.clone(),
                &site.endpoint,
                RequestSigner::new(cfg.das.key_id.clone(), &das_secret),
                timeout,
            );
        }
        let sites: BTreeSet<SiteId> = cfg.sites.iter().map(|s| s.site_id.clone()).collect();
        let mut tm_config = TaskManagerConfig::new(cfg.state_dir.join("tasks"));
        tm_config.site_concurrency = cfg.site_concurrency.max(1);
        let tasks = TaskManager::open(tm_config, repo.clone(), auth.clone(), Arc::new(sites.clone()), agents.clone())?;
        tasks.start();
        fs::create_dir_all(cfg.state_dir.join("profiles"))?;
        Ok(Fabric {
            auth,
            repo,
            tasks,
            agents,
            sites,
            state_dir: cfg.state_dir.clone(),
        })
    }

    pub fn state_dir(&self) -> &Path {
        &self.state_dir
    }

    pub fn profiles_dir(&self) -> PathBuf {
        self.state_dir.join("profiles")
    }

    /// Reads the bootstrap admin credential written on first start.
    pub fn admin_credential(state_dir: &Path) -> std::io::Result<(KeyId, fabric_core::auth::Secret)> {
        let key_id = fs::read_to_string(state_dir.join(ADMIN_KEY_ID_FILE))?;
        let secret = fs::read_to_string(state_dir.join(ADMIN_SECRET_FILE))?;
        Ok((
            KeyId::new(key_id.trim()),
            fabric_core::auth::Secret::new(secret.trim()),
        ))
    }
}
