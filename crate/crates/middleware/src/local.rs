//! An in-process fabric on loopback: the middleware plus one agent per
//! site, each on its own ephemeral port. Used for demos and tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use reqwest::Method;
use serde_json::json;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

use fabric_agent::client::SignedHttp;
use fabric_agent::config::KeyConfig;
use fabric_agent::{AgentConfig, PacRunnerSpec, SiteAgent};
use fabric_core::auth::{RequestSigner, Secret};
use fabric_core::domain::{KeyId, Principal, Role, SiteId, UserId};

use crate::client::{ApiClient, ClientError};
use crate::config::{MiddlewareConfig, SiteEndpoint};
use crate::fabric::{Fabric, StartError};

pub const DAS_KEY_ID: &str = "fk_das";
pub const DATA_OWNER: &str = "olga";

pub struct LocalSite {
    pub agent: Arc<SiteAgent>,
    pub endpoint: String,
    pub data_dir: PathBuf,
    pub config: AgentConfig,
    owner: SignedHttp,
}

pub struct LocalFabric {
    pub fabric: Arc<Fabric>,
    pub endpoint: String,
    pub sites: BTreeMap<SiteId, LocalSite>,
    pub root: PathBuf,
    shutdown: CancellationToken,
}

#[derive(Debug, thiserror::Error)]
pub enum LocalError {
    #[error(transparent)]
    Start(#[from] StartError),
    #[error(transparent)]
    Agent(#[from] fabric_agent::service::ConfigStartError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("local fabric: {0}")]
    Io(#[from] std::io::Error),
}

impl LocalFabric {
    /// Starts agents for `sites` and a middleware that knows them, all
    /// under `root`.
    pub async fn start(root: &Path, sites: &[&str], runner: PacRunnerSpec) -> Result<Self, LocalError> {
        let shutdown = CancellationToken::new();
        let das_secret = Secret::generate();
        let owner_secret = Secret::generate();
        let das = KeyConfig::inline("middleware", KeyId::new(DAS_KEY_ID), &das_secret);
        let mut local_sites = BTreeMap::new();
        for site in sites {
            let site_id = SiteId::new(*site);
            let base = root.join("sites").join(site);
            let listener = TcpListener::bind("127.0.0.1:0").await?;
            let addr = listener.local_addr()?;
            let config = AgentConfig {
                site_id: site_id.clone(),
                listen: addr,
                data_root: base.join("data"),
                work_dir: base.join("work"),
                state_dir: base.join("state"),
                parallelism: 4,
                middleware: das.clone(),
                owners: vec![KeyConfig::inline(DATA_OWNER, KeyId::new(format!("fk_owner_{site}")), &owner_secret)],
                runner: runner.clone(),
            };
            let agent = Arc::new(SiteAgent::from_config(&config)?);
            tokio::spawn(fabric_agent::http::serve(agent.clone(), listener, shutdown.clone()));
            let endpoint = format!("http://{addr}");
            let owner = SignedHttp::new(
                &endpoint,
                RequestSigner::new(KeyId::new(format!("fk_owner_{site}")), &owner_secret),
                Duration::from_secs(30),
            );
            local_sites.insert(
                site_id,
                LocalSite {
                    agent,
                    data_dir: config.data_root.clone(),
                    endpoint,
                    config,
                    owner,
                },
            );
        }
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let mw_config = MiddlewareConfig {
            listen: addr,
            state_dir: root.join("middleware"),
            admin: UserId::new("admin"),
            site_concurrency: fabric_core::tasks::DEFAULT_SITE_CONCURRENCY,
            step_timeout_seconds: 600,
            das,
            sites: local_sites
                .iter()
                .map(|(id, s)| SiteEndpoint {
                    site_id: id.clone(),
                    endpoint: s.endpoint.clone(),
                })
                .collect(),
        };
        let fabric = Arc::new(Fabric::open(&mw_config)?);
        fs::write(root.join("middleware.toml"), mw_config.to_toml())?;
        tokio::spawn(crate::serve(fabric.clone(), listener, shutdown.clone()));
        Ok(LocalFabric {
            fabric,
            endpoint: format!("http://{addr}"),
            sites: local_sites,
            root: root.to_path_buf(),
            shutdown,
        })
    }

    pub fn admin(&self) -> ApiClient {
        let (key, secret) = Fabric::admin_credential(self.fabric.state_dir()).expect("bootstrap credential");
        ApiClient::new(&self.endpoint, key, &secret)
    }

    /// Registers `user` with `roles` and returns a client holding a fresh key.
    pub async fn user(&self, user: &str, roles: &[Role]) -> Result<ApiClient, LocalError> {
        let admin = self.admin();
        let role_names: Vec<String> = roles
            .iter()
            .map(|r| serde_json::to_value(r).expect("role").as_str().expect("role name").to_string())
            .collect();
        admin.register_principal(user, &role_names, &[]).await?;
        let issued = admin.issue_key(user, None).await?;
        Ok(ApiClient::new(
            &self.endpoint,
            KeyId::new(issued["key_id"].as_str().expect("key id")),
            &Secret::new(issued["secret"].as_str().expect("secret")),
        ))
    }

    pub fn site(&self, site: &str) -> &LocalSite {
        &self.sites[&SiteId::new(site)]
    }

    /// Writes `bytes` under the site's data root, registers it as
    /// `dataset` and grants it to `users`.
    pub async fn add_dataset(&self, site: &str, dataset: &str, file: &str, bytes: &[u8], users: &[&str]) -> Result<(), LocalError> {
        let s = self.site(site);
        let path = s.data_dir.join(file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        let check = |r: fabric_agent::client::RawResponse| {
            if r.is_success() {
                Ok(())
            } else {
                Err(ClientError::Api { status: r.status, body: r.error_body() })
            }
        };
        let r = s
            .owner
            .json(Method::POST, "/v1/datasets", Some(&json!({ "dataset_id": dataset, "locator": file })))
            .await
            .map_err(ClientError::from)?;
        check(r)?;
        for user in users {
            let r = s
                .owner
                .json(Method::POST, &format!("/v1/datasets/{dataset}/grants"), Some(&json!({ "user": user })))
                .await
                .map_err(ClientError::from)?;
            check(r)?;
        }
        Ok(())
    }

    /// The data owner principal configured on every local agent.
    pub fn data_owner(&self) -> Principal {
        Principal::new(DATA_OWNER, [Role::DataOwner]).owning(self.sites.keys().cloned())
    }

    pub fn shutdown(&self) {
        self.shutdown.cancel();
    }
}

impl Drop for LocalFabric {
    fn drop(&mut self) {
        self.shutdown.cancel();
    }
}
