//! Site-local dataset catalog and grants.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use fabric_core::auth::dataset_resource;
use fabric_core::auth::AuthService;
use fabric_core::domain::{Action, DatasetId, Principal, SiteId, UserId};
use fabric_core::repo::write_atomic;

use crate::AgentError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: DatasetId,
    /// Relative to the site data root.
    pub locator: String,
    pub owner: UserId,
    pub grants: BTreeSet<UserId>,
    pub registered_at: DateTime<Utc>,
}

pub struct DatasetCatalog {
    site_id: SiteId,
    root: PathBuf,
    file: Option<PathBuf>,
    records: RwLock<BTreeMap<DatasetId, DatasetRecord>>,
}

/// Resolves `locator` under `root`, rejecting absolute paths, `..`
/// components and symlinks that lead outside the root.
pub fn resolve_locator(root: &Path, locator: &str) -> Result<PathBuf, AgentError> {
    let escapes = || AgentError::LocatorEscapesRoot(locator.to_string());
    let rel = Path::new(locator);
    if locator.is_empty() || rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(escapes());
    }
    let root = root.canonicalize().map_err(|e| AgentError::Io(format!("data root: {e}")))?;
    let joined = root.join(rel);
    match joined.canonicalize() {
        Ok(real) if real.starts_with(&root) => Ok(real),
        Ok(_) => Err(escapes()),
        Err(_) => Err(AgentError::BadRequest(format!("locator `{locator}` does not exist"))),
    }
}

impl DatasetCatalog {
    pub fn open(site_id: SiteId, root: impl Into<PathBuf>, file: Option<PathBuf>) -> Result<Self, AgentError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| AgentError::Io(e.to_string()))?;
        let records = match &file {
            Some(f) if f.exists() => {
                let bytes = fs::read(f).map_err(|e| AgentError::Io(e.to_string()))?;
                serde_json::from_slice(&bytes).map_err(|e| AgentError::Io(format!("{}: {e}", f.display())))?
            }
            _ => BTreeMap::new(),
        };
        Ok(DatasetCatalog {
            site_id,
            root,
            file,
            records: RwLock::new(records),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn save(&self, records: &BTreeMap<DatasetId, DatasetRecord>) -> Result<(), AgentError> {
        if let Some(f) = &self.file {
            write_atomic(f, &serde_json::to_vec_pretty(records).expect("catalog serializes"))
                .map_err(|e| AgentError::Io(e.to_string()))?;
        }
        Ok(())
    }

    fn require_owner(&self, auth: &AuthService, owner: &Principal, id: &DatasetId) -> Result<(), AgentError> {
        auth.authorize(owner, Action::Grant, &dataset_resource(&self.site_id, id))
            .into_result()
            .map_err(|e| AgentError::PermissionDenied(e.to_string()))
    }

    pub fn register(
        &self,
        auth: &AuthService,
        owner: &Principal,
        id: DatasetId,
        locator: &str,
    ) -> Result<DatasetRecord, AgentError> {
        self.require_owner(auth, owner, &id)?;
        resolve_locator(&self.root, locator)?;
        let mut records = self.records.write();
        if records.get(&id).is_some_and(|r| r.owner != owner.user_id && !owner.admin) {
            return Err(AgentError::PermissionDenied(format!("dataset {id} belongs to another owner")));
        }
        let grants = records.get(&id).map(|r| r.grants.clone()).unwrap_or_default();
        let record = DatasetRecord {
            dataset_id: id.clone(),
            locator: locator.to_string(),
            owner: owner.user_id.clone(),
            grants,
            registered_at: Utc::now(),
        };
        records.insert(id, record.clone());
        self.save(&records)?;
        Ok(record)
    }

    pub fn grant(&self, auth: &AuthService, owner: &Principal, id: &DatasetId, user: UserId) -> Result<DatasetRecord, AgentError> {
        self.require_owner(auth, owner, id)?;
        let mut records = self.records.write();
        let record = records
            .get_mut(id)
            .ok_or_else(|| AgentError::NotFound(format!("dataset {id}")))?;
        record.grants.insert(user);
        let out = record.clone();
        self.save(&records)?;
        Ok(out)
    }

    pub fn list(&self) -> Vec<DatasetRecord> {
        self.records.read().values().cloned().collect()
    }

    /// The dataset's real path, if `user` owns it or holds a grant.
    pub fn resolve_for(&self, user: &UserId, id: &DatasetId) -> Result<PathBuf, AgentError> {
        let records = self.records.read();
        let record = records
            .get(id)
            .filter(|r| &r.owner == user || r.grants.contains(user))
            .ok_or_else(|| AgentError::DatasetDenied(id.clone()))?;
        resolve_locator(&self.root, &record.locator)
    }
}
