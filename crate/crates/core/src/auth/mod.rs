//! Key-based authentication and deny-by-default authorization.

mod signing;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Action, DatasetId, KeyId, Permission, Principal, Resource, ResourcePattern, Role, Root, SiteId,
    UserId,
};

pub use signing::{
    CanonicalRequest, RequestSigner, Secret, SignedHeaders, SigningKey, HEADER_KEY_ID,
    HEADER_SIGNATURE, HEADER_TIMESTAMP, MAX_SKEW_SECS,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("invalid signature")]
    InvalidSignature,
    #[error("key {0} has been revoked")]
    KeyRevoked(KeyId),
    #[error("key {0} has expired")]
    KeyExpired(KeyId),
    #[error("request timestamp outside the accepted window")]
    StaleTimestamp,
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("unknown principal {0}")]
    UnknownPrincipal(UserId),
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
    #[error("auth store i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(String),
}

impl Decision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Decision::Allow)
    }

    pub fn into_result(self) -> Result<(), AuthError> {
        match self {
            Decision::Allow => Ok(()),
            Decision::Deny(reason) => Err(AuthError::PermissionDenied(reason)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredKey {
    key_id: KeyId,
    /// Hex of the salted secret hash; the clear secret is never stored.
    signing_key: String,
    principal: UserId,
    expires_at: Option<DateTime<Utc>>,
    revoked: bool,
}

#[derive(Default, Serialize, Deserialize)]
struct AuthState {
    principals: HashMap<UserId, Principal>,
    keys: HashMap<KeyId, StoredKey>,
    permissions: Vec<Permission>,
}

/// The key table, principal registry and permission table.
pub struct AuthService {
    state: RwLock<AuthState>,
    persist_to: Option<PathBuf>,
}

impl Default for AuthService {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl AuthService {
    pub fn in_memory() -> Self {
        Self {
            state: RwLock::new(AuthState::default()),
            persist_to: None,
        }
    }

    /// Opens (or creates) a persistent store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuthError> {
        let path = path.as_ref().to_path_buf();
        let state = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| AuthError::Io(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => AuthState::default(),
            Err(e) => return Err(AuthError::Io(e.to_string())),
        };
        Ok(Self {
            state: RwLock::new(state),
            persist_to: Some(path),
        })
    }

    fn persist(&self, state: &AuthState) -> Result<(), AuthError> {
        let Some(path) = &self.persist_to else {
            return Ok(());
        };
        let bytes = serde_json::to_vec_pretty(state).map_err(|e| AuthError::Io(e.to_string()))?;
        crate::repo::write_atomic(path, &bytes).map_err(|e| AuthError::Io(e.to_string()))
    }

    /// Registers the bootstrap administrator and issues its first key. Only
    /// succeeds while no administrator exists.
    pub fn bootstrap(&self, admin: &UserId) -> Result<Option<(KeyId, Secret)>, AuthError> {
        let mut state = self.state.write();
        if state.principals.values().any(|p| p.admin) {
            return Ok(None);
        }
        state
            .principals
            .insert(admin.clone(), Principal::bootstrap_admin(admin.clone()));
        let issued = insert_new_key(&mut state, admin, None);
        self.persist(&state)?;
        Ok(Some(issued))
    }

    pub fn principal(&self, user: &UserId) -> Option<Principal> {
        self.state.read().principals.get(user).cloned()
    }

    pub fn principals(&self) -> Vec<Principal> {
        let mut all: Vec<_> = self.state.read().principals.values().cloned().collect();
        all.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        all
    }

    /// Adds or replaces a principal. Requires administrative rights, so the
    /// role table can't be used to escalate.
    pub fn register_principal(&self, admin: &Principal, principal: Principal) -> Result<(), AuthError> {
        if !admin.admin {
            return Err(AuthError::PermissionDenied(
                "only the administrator registers principals".into(),
            ));
        }
        let mut state = self.state.write();
        state.principals.insert(principal.user_id.clone(), principal);
        self.persist(&state)
    }

    /// Local configuration path used by site agents and tests; no caller check.
    pub fn install_principal(&self, principal: Principal) {
        let mut state = self.state.write();
        state.principals.insert(principal.user_id.clone(), principal);
        let _ = self.persist(&state);
    }

    pub fn issue_key(
        &self,
        admin: &Principal,
        for_principal: &UserId,
        ttl: Option<Duration>,
    ) -> Result<(KeyId, Secret), AuthError> {
        self.authorize(admin, Action::Grant, &Resource::Credentials)
            .into_result()?;
        if ttl == Some(Duration::ZERO) {
            return Err(AuthError::InvalidTtl);
        }
        let mut state = self.state.write();
        if !state.principals.contains_key(for_principal) {
            return Err(AuthError::UnknownPrincipal(for_principal.clone()));
        }
        let expires_at = ttl.map(|t| Utc::now() + chrono::Duration::from_std(t).unwrap_or(chrono::Duration::MAX));
        let issued = insert_new_key(&mut state, for_principal, expires_at);
        self.persist(&state)?;
        Ok(issued)
    }

    /// Installs a key whose secret was provisioned out of band (agent config).
    pub fn install_key(&self, key_id: KeyId, secret: &Secret, principal: UserId) {
        let mut state = self.state.write();
        let signing_key = SigningKey::derive(&key_id, secret).to_hex();
        state.keys.insert(
            key_id.clone(),
            StoredKey {
                key_id,
                signing_key,
                principal,
                expires_at: None,
                revoked: false,
            },
        );
        let _ = self.persist(&state);
    }

    pub fn revoke_key(&self, admin: &Principal, key_id: &KeyId) -> Result<(), AuthError> {
        self.authorize(admin, Action::Grant, &Resource::Credentials)
            .into_result()?;
        let mut state = self.state.write();
        let key = state
            .keys
            .get_mut(key_id)
            .ok_or_else(|| AuthError::UnknownKey(key_id.clone()))?;
        key.revoked = true;
        self.persist(&state)
    }

    pub fn has_key(&self, key_id: &KeyId) -> bool {
        self.state
            .read()
            .keys
            .get(key_id)
            .is_some_and(|k| !k.revoked)
    }

    /// A signer for outbound requests made with a key held in this table.
    pub fn signer_for(&self, key_id: &KeyId) -> Option<RequestSigner> {
        let state = self.state.read();
        let key = state.keys.get(key_id).filter(|k| !k.revoked)?;
        Some(RequestSigner::from_signing_key(
            key.key_id.clone(),
            SigningKey::from_hex(&key.signing_key)?,
        ))
    }

    pub fn authenticate(
        &self,
        signature_hex: &str,
        key_id: &KeyId,
        canonical: &CanonicalRequest,
    ) -> Result<Principal, AuthError> {
        self.authenticate_at(signature_hex, key_id, canonical, Utc::now())
    }

    /// Authenticates a request from its three signature headers, read
    /// through `header`. Missing or unparsable headers count as a bad
    /// signature.
    pub fn authenticate_headers<'h>(
        &self,
        method: &str,
        path_and_query: &str,
        body: &[u8],
        header: impl Fn(&str) -> Option<&'h str>,
    ) -> Result<Principal, AuthError> {
        let key_id = header(HEADER_KEY_ID).ok_or(AuthError::InvalidSignature)?;
        let signature = header(HEADER_SIGNATURE).ok_or(AuthError::InvalidSignature)?;
        let timestamp: i64 = header(HEADER_TIMESTAMP)
            .and_then(|t| t.trim().parse().ok())
            .ok_or(AuthError::InvalidSignature)?;
        let canonical = CanonicalRequest::new(method, path_and_query, body, timestamp);
        self.authenticate(signature, &KeyId::new(key_id), &canonical)
    }

    pub fn authenticate_at(
        &self,
        signature_hex: &str,
        key_id: &KeyId,
        canonical: &CanonicalRequest,
        now: DateTime<Utc>,
    ) -> Result<Principal, AuthError> {
        let state = self.state.read();
        let key = state.keys.get(key_id).ok_or(AuthError::InvalidSignature)?;
        let signing_key = SigningKey::from_hex(&key.signing_key).ok_or(AuthError::InvalidSignature)?;
        if !signing_key.verify(canonical, signature_hex) {
            return Err(AuthError::InvalidSignature);
        }
        if key.revoked {
            return Err(AuthError::KeyRevoked(key_id.clone()));
        }
        if key.expires_at.is_some_and(|t| t <= now) {
            return Err(AuthError::KeyExpired(key_id.clone()));
        }
        if (now.timestamp() - canonical.timestamp).abs() > MAX_SKEW_SECS {
            return Err(AuthError::StaleTimestamp);
        }
        state
            .principals
            .get(&key.principal)
            .cloned()
            .ok_or(AuthError::InvalidSignature)
    }

    pub fn permissions(&self) -> Vec<Permission> {
        self.state.read().permissions.clone()
    }

    /// Records an explicit permission. The granter needs `Grant` on the
    /// resource the permission covers.
    pub fn grant_permission(&self, granter: &Principal, permission: Permission) -> Result<(), AuthError> {
        let target = match &permission.resource {
            ResourcePattern::Dataset { site, dataset } => Resource::Dataset {
                site: site.clone(),
                dataset: dataset.clone(),
            },
            ResourcePattern::RepoPrefix(_) => Resource::Credentials,
        };
        self.authorize(granter, Action::Grant, &target).into_result()?;
        let mut state = self.state.write();
        if !state.permissions.contains(&permission) {
            state.permissions.push(permission);
        }
        self.persist(&state)
    }

    pub fn authorize(&self, principal: &Principal, action: Action, resource: &Resource) -> Decision {
        let state = self.state.read();
        authorize_with(&state.permissions, principal, action, resource)
    }
}

fn insert_new_key(
    state: &mut AuthState,
    principal: &UserId,
    expires_at: Option<DateTime<Utc>>,
) -> (KeyId, Secret) {
    let key_id = KeyId::generate();
    let secret = Secret::generate();
    state.keys.insert(
        key_id.clone(),
        StoredKey {
            key_id: key_id.clone(),
            signing_key: SigningKey::derive(&key_id, &secret).to_hex(),
            principal: principal.clone(),
            expires_at,
            revoked: false,
        },
    );
    (key_id, secret)
}

/// Pure authorization decision over a permission table.
pub fn authorize_with(
    permissions: &[Permission],
    principal: &Principal,
    action: Action,
    resource: &Resource,
) -> Decision {
    if principal.admin {
        return Decision::Allow;
    }
    if role_allows(principal, action, resource, permissions) {
        return Decision::Allow;
    }
    if explicit_allows(permissions, principal, action, resource) {
        return Decision::Allow;
    }
    Decision::Deny(format!(
        "{} may not {:?} {}",
        principal.user_id,
        action,
        describe(resource)
    ))
}

fn describe(resource: &Resource) -> String {
    match resource {
        Resource::Repo { path, .. } => path.to_string(),
        Resource::Dataset { site, dataset } => format!("dataset {site}/{dataset}"),
        Resource::Task { owner } => format!("a task owned by {owner}"),
        Resource::Credentials => "credentials".into(),
    }
}

fn role_allows(p: &Principal, action: Action, resource: &Resource, permissions: &[Permission]) -> bool {
    match resource {
        Resource::Repo { path, owner, enabled } => {
            let user_tree = path.root_kind() == Root::User;
            let own_tree = user_tree && owner.as_ref() == Some(&p.user_id);
            if user_tree && !own_tree {
                return false;
            }
            if p.has_role(Role::WorkflowDesigner)
                && matches!(
                    action,
                    Action::Read | Action::WriteParams | Action::WriteStructure | Action::Execute
                )
            {
                return true;
            }
            if p.has_role(Role::DataOwner) && action == Action::Read {
                return true;
            }
            if p.has_role(Role::DataAnalyst) {
                return match action {
                    Action::Read => own_tree,
                    Action::WriteParams => own_tree,
                    Action::Execute => {
                        *enabled
                            && (own_tree
                                || explicit_allows(permissions, p, Action::Read, resource))
                    }
                    _ => false,
                };
            }
            false
        }
        Resource::Dataset { site, .. } => {
            p.has_role(Role::DataOwner)
                && p.owned_sites.contains(site)
                && matches!(action, Action::Grant | Action::Read)
        }
        Resource::Task { owner } => {
            matches!(action, Action::Read | Action::Execute)
                && (p.has_role(Role::WorkflowDesigner)
                    || (owner == &p.user_id && !p.roles.is_empty()))
        }
        Resource::Credentials => action == Action::Grant && p.has_role(Role::DataOwner),
    }
}

fn explicit_allows(
    permissions: &[Permission],
    p: &Principal,
    action: Action,
    resource: &Resource,
) -> bool {
    permissions
        .iter()
        .filter(|perm| perm.principal == p.user_id && perm.actions.contains(&action))
        .any(|perm| match (&perm.resource, resource) {
            (ResourcePattern::RepoPrefix(prefix), Resource::Repo { path, .. }) => {
                if prefix.root_kind() != Root::Shared || path.root_kind() != Root::Shared {
                    return false;
                }
                // Read on a subtree also reveals its ancestors for navigation.
                path.starts_with(prefix) || (action == Action::Read && prefix.starts_with(path))
            }
            (
                ResourcePattern::Dataset { site, dataset },
                Resource::Dataset {
                    site: s,
                    dataset: d,
                },
            ) => site == s && dataset == d,
            _ => false,
        })
}

/// Shorthand for dataset resources.
pub fn dataset_resource(site: &SiteId, dataset: &DatasetId) -> Resource {
    Resource::Dataset {
        site: site.clone(),
        dataset: dataset.clone(),
    }
}
