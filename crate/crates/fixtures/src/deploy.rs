//! Installs fixture workflows and datasets into a running fabric.

use serde_json::json;
use thiserror::Error;

use fabric_middleware::local::{LocalError, LocalFabric};
use fabric_middleware::{ApiClient, ClientError};

use crate::assets::FixtureWorkflow;
use crate::generate::generate_datasets;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    Local(#[from] LocalError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("fixture: {0}")]
    Unexpected(String),
}

/// Creates the workflow's use case (once), a fresh version holding the
/// fixture files, and enables it. Fails if the fabric assigns a different
/// version path than the fixture tree uses.
pub async fn install(designer: &ApiClient, wf: &FixtureWorkflow) -> Result<(), FixtureError> {
    let sites: Vec<String> = wf.sites.iter().map(|s| s.to_string()).collect();
    match designer.create_use_case("shared", wf.use_case(), &sites).await {
        Ok(_) => {}
        Err(e) if e.code() == Some("DuplicateName") => {}
        Err(e) => return Err(e.into()),
    }
    let created = designer.add_version(wf.workflow_path()).await?;
    if created["path"] != wf.version_path {
        return Err(FixtureError::Unexpected(format!(
            "expected {} but the fabric created {}",
            wf.version_path, created["path"]
        )));
    }
    for f in wf.files {
        designer
            .put_file(&format!("{}/{}", wf.version_path, f.name), f.contents.as_bytes().to_vec())
            .await?;
    }
    designer.set_enabled(wf.version_path, true).await?;
    Ok(())
}

/// Registers every generated dataset on its site, readable by `users`.
pub async fn install_datasets(fabric: &LocalFabric, seed: u64, users: &[&str]) -> Result<(), FixtureError> {
    for (site, files) in generate_datasets(seed) {
        for (file, bytes) in files {
            let dataset = file.strip_suffix(".csv").unwrap_or(&file).to_string();
            fabric.add_dataset(site.as_str(), &dataset, &file, &bytes, users).await?;
        }
    }
    Ok(())
}

pub async fn grant_read(admin: &ApiClient, user: &str, path: &str) -> Result<(), FixtureError> {
    admin
        .grant(&json!({ "principal": user, "resource": path, "actions": ["read"] }))
        .await?;
    Ok(())
}
