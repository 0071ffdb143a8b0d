//! The hierarchical workflow repository.
//!
//! Assets are stored as a directory tree mirroring [`RepoPath`]:
//! `tree/shared/...` for the shared root and `tree/users/<user>/...` for each
//! user's own root. Use-case records and version enabled flags live in one
//! manifest file per root under `manifests/`.

mod config;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthService, Decision};
use crate::domain::{
    Action, Depth, FileSet, MalformedPath, Principal, RepoPath, Resource, Role, Root, Segment,
    SiteId, UseCase, UseCaseKey, UserId, VersionLabel, WorkflowConfig,
};

pub use config::{
    params_only_change, parse_config, validate_config, validate_references, ConfigContext,
    ConfigError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RepoError {
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("a use case named `{0}` already exists")]
    DuplicateName(String),
    #[error("`{0}` is not a workflow directory")]
    NotAWorkflow(RepoPath),
    #[error("cloning `{0}` is not allowed")]
    CloneForbidden(RepoPath),
    #[error("`{0}` is not a version directory")]
    NotAVersionDirectory(RepoPath),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error(transparent)]
    Malformed(#[from] MalformedPath),
    #[error("`{0}` was modified since it was read")]
    StaleWrite(RepoPath),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("repository i/o: {0}")]
    Io(String),
}

impl From<io::Error> for RepoError {
    fn from(e: io::Error) -> Self {
        RepoError::Io(e.to_string())
    }
}

fn denied(decision: Decision) -> Result<(), RepoError> {
    match decision {
        Decision::Allow => Ok(()),
        Decision::Deny(reason) => Err(RepoError::PermissionDenied(reason)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    UseCase,
    Workflow,
    Version,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub path: RepoPath,
    pub kind: EntryKind,
    pub size_bytes: u64,
    pub modified_at: DateTime<Utc>,
    pub writable_by_caller: bool,
    /// Set for version entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum RootKey {
    Shared,
    User(UserId),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Manifest {
    use_cases: BTreeMap<String, UseCase>,
    /// Rendered version paths that are enabled for execution.
    enabled: BTreeSet<String>,
}

/// Writes `bytes` to `path` through a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "tmp{}",
        rand::random::<u32>()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub struct RepoStore {
    base: PathBuf,
    auth: Arc<AuthService>,
    manifests: Mutex<HashMap<RootKey, Manifest>>,
    root_locks: Mutex<HashMap<RootKey, Arc<RwLock<()>>>>,
}

impl RepoStore {
    pub fn open(base: impl Into<PathBuf>, auth: Arc<AuthService>) -> Result<Self, RepoError> {
        let base = base.into();
        fs::create_dir_all(base.join("tree").join("shared"))?;
        fs::create_dir_all(base.join("tree").join("users"))?;
        fs::create_dir_all(base.join("manifests"))?;
        Ok(Self {
            base,
            auth,
            manifests: Mutex::new(HashMap::new()),
            root_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    fn root_key(&self, principal: &Principal, root: Root) -> Result<RootKey, RepoError> {
        match root {
            Root::Shared => Ok(RootKey::Shared),
            Root::User => {
                Segment::parse(principal.user_id.as_str()).map_err(|_| {
                    RepoError::PermissionDenied(format!(
                        "{} has no user directory",
                        principal.user_id
                    ))
                })?;
                Ok(RootKey::User(principal.user_id.clone()))
            }
        }
    }

    fn lock_for(&self, key: &RootKey) -> Arc<RwLock<()>> {
        self.root_locks
            .lock()
            .entry(key.clone())
            .or_insert_with(|| Arc::new(RwLock::new(())))
            .clone()
    }

    fn root_dir(&self, key: &RootKey) -> PathBuf {
        match key {
            RootKey::Shared => self.base.join("tree").join("shared"),
            RootKey::User(u) => self.base.join("tree").join("users").join(u.as_str()),
        }
    }

    fn disk_path(&self, key: &RootKey, path: &RepoPath) -> PathBuf {
        let mut p = self.root_dir(key);
        for seg in path.segments() {
            p.push(seg);
        }
        p
    }

    fn manifest_file(&self, key: &RootKey) -> PathBuf {
        match key {
            RootKey::Shared => self.base.join("manifests").join("shared.json"),
            RootKey::User(u) => self.base.join("manifests").join(format!("user-{u}.json")),
        }
    }

    fn with_manifest<T>(&self, key: &RootKey, f: impl FnOnce(&mut Manifest) -> T) -> Result<(T, bool), RepoError> {
        let mut cache = self.manifests.lock();
        if !cache.contains_key(key) {
            let manifest = match fs::read(self.manifest_file(key)) {
                Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RepoError::Io(e.to_string()))?,
                Err(e) if e.kind() == io::ErrorKind::NotFound => Manifest::default(),
                Err(e) => return Err(e.into()),
            };
            cache.insert(key.clone(), manifest);
        }
        let manifest = cache.get_mut(key).expect("inserted above");
        let before = serde_json::to_vec(manifest).map_err(|e| RepoError::Io(e.to_string()))?;
        let out = f(manifest);
        let after = serde_json::to_vec_pretty(manifest).map_err(|e| RepoError::Io(e.to_string()))?;
        let changed = serde_json::to_vec(manifest).map_err(|e| RepoError::Io(e.to_string()))? != before;
        if changed {
            write_atomic(&self.manifest_file(key), &after)?;
        }
        Ok((out, changed))
    }

    fn read_manifest<T>(&self, key: &RootKey, f: impl FnOnce(&Manifest) -> T) -> Result<T, RepoError> {
        self.with_manifest(key, |m| f(m)).map(|(t, _)| t)
    }

    fn is_enabled(&self, key: &RootKey, path: &RepoPath) -> Result<bool, RepoError> {
        match path.version_dir() {
            Some(v) => {
                let text = v.to_string();
                self.read_manifest(key, |m| m.enabled.contains(&text))
            }
            None => Ok(true),
        }
    }

    fn resource(&self, principal: &Principal, key: &RootKey, path: &RepoPath) -> Result<Resource, RepoError> {
        let owner = match key {
            RootKey::Shared => None,
            RootKey::User(u) => Some(u.clone()),
        };
        let _ = principal;
        Ok(Resource::Repo {
            path: path.clone(),
            owner,
            enabled: self.is_enabled(key, path)?,
        })
    }

    fn authorize(&self, principal: &Principal, key: &RootKey, action: Action, path: &RepoPath) -> Result<(), RepoError> {
        let resource = self.resource(principal, key, path)?;
        denied(self.auth.authorize(principal, action, &resource))
    }

    fn allowed(&self, principal: &Principal, key: &RootKey, action: Action, path: &RepoPath) -> bool {
        self.authorize(principal, key, action, path).is_ok()
    }

    /// Designers and administrators see disabled versions; others don't.
    fn sees_disabled(principal: &Principal) -> bool {
        principal.admin || principal.has_role(Role::WorkflowDesigner)
    }

    pub fn create_use_case(
        &self,
        principal: &Principal,
        root: Root,
        name: &str,
        site_ids: Vec<SiteId>,
    ) -> Result<UseCase, RepoError> {
        if !(principal.admin
            || principal.has_role(Role::WorkflowDesigner)
            || principal.has_role(Role::DataOwner))
        {
            return Err(RepoError::PermissionDenied(format!(
                "{} may not create use cases",
                principal.user_id
            )));
        }
        if name.trim().is_empty() {
            return Err(RepoError::InvalidName("use case name must not be empty".into()));
        }
        let key = self.root_key(principal, root)?;
        let path = RepoPath::root(root).child(name)?;
        let lock = self.lock_for(&key);
        let _guard = lock.write();
        let dir = self.disk_path(&key, &path);
        let (result, _) = self.with_manifest(&key, |m| {
            if m.use_cases.contains_key(name) || dir.exists() {
                return Err(RepoError::DuplicateName(name.to_owned()));
            }
            let uc = UseCase {
                key: UseCaseKey::generate(),
                name: name.to_owned(),
                owner: principal.user_id.clone(),
                site_ids,
                created_at: Utc::now(),
            };
            m.use_cases.insert(name.to_owned(), uc.clone());
            Ok(uc)
        })?;
        let uc = result?;
        fs::create_dir_all(&dir)?;
        Ok(uc)
    }

    pub fn use_case(&self, principal: &Principal, path: &RepoPath) -> Result<UseCase, RepoError> {
        let key = self.root_key(principal, path.root_kind())?;
        let name = path
            .use_case()
            .ok_or_else(|| RepoError::NotFound(path.to_string()))?
            .to_string();
        self.read_manifest(&key, |m| m.use_cases.get(&name).cloned())?
            .ok_or_else(|| RepoError::NotFound(path.to_string()))
    }

    fn existing_versions(dir: &Path) -> Result<Vec<VersionLabel>, RepoError> {
        let mut out = Vec::new();
        match fs::read_dir(dir) {
            Ok(rd) => {
                for entry in rd {
                    let entry = entry?;
                    if entry.file_type()?.is_dir() {
                        if let Ok(v) = VersionLabel::parse(&entry.file_name().to_string_lossy()) {
                            out.push(v);
                        }
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        out.sort();
        Ok(out)
    }

    fn next_version(dir: &Path) -> Result<VersionLabel, RepoError> {
        Ok(Self::existing_versions(dir)?
            .last()
            .map(|v| v.next())
            .unwrap_or(VersionLabel::new(1).expect("1 is a valid version")))
    }

    /// Creates the next version folder under a workflow, creating the
    /// workflow itself if this is its first version.
    pub fn add_version(&self, principal: &Principal, workflow_path: &RepoPath) -> Result<RepoPath, RepoError> {
        if workflow_path.depth() != Depth::Workflow {
            return Err(RepoError::NotAWorkflow(workflow_path.clone()));
        }
        let key = self.root_key(principal, workflow_path.root_kind())?;
        self.authorize(principal, &key, Action::WriteStructure, workflow_path)?;
        let lock = self.lock_for(&key);
        let _guard = lock.write();
        let uc_dir = self.disk_path(&key, &workflow_path.use_case_dir().expect("workflow depth"));
        if !uc_dir.is_dir() {
            return Err(RepoError::NotFound(
                workflow_path.use_case_dir().expect("workflow depth").to_string(),
            ));
        }
        let wf_dir = self.disk_path(&key, workflow_path);
        let next = Self::next_version(&wf_dir)?;
        let path = workflow_path.with_version(next).expect("workflow depth");
        fs::create_dir_all(self.disk_path(&key, &path))?;
        Ok(path)
    }

    pub fn set_enabled(&self, principal: &Principal, version_path: &RepoPath, enabled: bool) -> Result<(), RepoError> {
        if version_path.depth() != Depth::Version {
            return Err(RepoError::NotAVersionDirectory(version_path.clone()));
        }
        let key = self.root_key(principal, version_path.root_kind())?;
        self.authorize(principal, &key, Action::WriteStructure, version_path)?;
        if !self.disk_path(&key, version_path).is_dir() {
            return Err(RepoError::NotFound(version_path.to_string()));
        }
        let text = version_path.to_string();
        self.with_manifest(&key, |m| {
            if enabled {
                m.enabled.insert(text);
            } else {
                m.enabled.remove(&text);
            }
        })?;
        Ok(())
    }

    /// Deep-copies a workflow, version or file. `into` selects a destination
    /// root; cloning into the caller's own tree needs only read access to
    /// the source.
    pub fn duplicate(&self, principal: &Principal, path: &RepoPath, into: Option<Root>) -> Result<RepoPath, RepoError> {
        if matches!(path.depth(), Depth::Root | Depth::UseCase) {
            return Err(RepoError::CloneForbidden(path.clone()));
        }
        let src_key = self.root_key(principal, path.root_kind())?;
        let dest_root = into.unwrap_or(path.root_kind());
        if path.depth() == Depth::File && dest_root != path.root_kind() {
            return Err(RepoError::CloneForbidden(path.clone()));
        }
        let dest_key = self.root_key(principal, dest_root)?;
        self.authorize(principal, &src_key, Action::Read, path)?;
        let src_disk = self.disk_path(&src_key, path);
        if !src_disk.exists() {
            return Err(RepoError::NotFound(path.to_string()));
        }

        let src_lock = self.lock_for(&src_key);
        let dest_lock = self.lock_for(&dest_key);
        let (_a, _b);
        if src_key == dest_key {
            _a = Some(src_lock.write());
            _b = None;
        } else {
            // Fixed acquisition order: shared before user trees.
            let (first, second) = if src_key == RootKey::Shared {
                (&src_lock, &dest_lock)
            } else {
                (&dest_lock, &src_lock)
            };
            _a = Some(first.write());
            _b = Some(second.write());
        }

        let dest = self.clone_destination(&dest_key, path, dest_root)?;
        let own_clone = dest_root == Root::User && dest_key != src_key;
        if !own_clone {
            self.authorize(principal, &dest_key, Action::WriteStructure, &dest)?;
        }

        if own_clone {
            let uc = self.use_case_record(&src_key, path)?;
            let uc_dir = self.disk_path(&dest_key, &dest.use_case_dir().expect("has use case"));
            fs::create_dir_all(&uc_dir)?;
            if let Some(uc) = uc {
                self.with_manifest(&dest_key, |m| {
                    m.use_cases.entry(uc.name.clone()).or_insert(uc);
                })?;
            }
        }

        let dest_disk = self.disk_path(&dest_key, &dest);
        copy_recursively(&src_disk, &dest_disk)?;

        // Clones into the caller's tree keep the enabled flags of the
        // versions they copy; copies within a root start disabled.
        if own_clone {
            let src_flags: Vec<String> = self.read_manifest(&src_key, |m| m.enabled.iter().cloned().collect())?;
            let mapping: Vec<String> = src_flags
                .into_iter()
                .filter_map(|v| RepoPath::parse(&v).ok())
                .filter(|v| v.starts_with(path) || path.starts_with(v))
                .filter_map(|v| remap(&v, path, &dest))
                .map(|p| p.to_string())
                .collect();
            self.with_manifest(&dest_key, |m| m.enabled.extend(mapping))?;
        }
        Ok(dest)
    }

    fn use_case_record(&self, key: &RootKey, path: &RepoPath) -> Result<Option<UseCase>, RepoError> {
        let name = match path.use_case() {
            Some(s) => s.to_string(),
            None => return Ok(None),
        };
        self.read_manifest(key, |m| m.use_cases.get(&name).cloned())
    }

    fn clone_destination(&self, dest_key: &RootKey, src: &RepoPath, dest_root: Root) -> Result<RepoPath, RepoError> {
        let same_root = dest_root == src.root_kind();
        let parent = src.parent().expect("depth checked").with_root(dest_root);
        let parent_disk = self.disk_path(dest_key, &parent);
        match src.depth() {
            Depth::Workflow => {
                let name = src.workflow().expect("workflow depth").to_string();
                let candidate = parent.child(&name)?;
                if !same_root && !self.disk_path(dest_key, &candidate).exists() {
                    return Ok(candidate);
                }
                let mut n = 1;
                loop {
                    let candidate = parent.child(&format!("{name}_copy{n}"))?;
                    if !self.disk_path(dest_key, &candidate).exists() {
                        return Ok(candidate);
                    }
                    n += 1;
                }
            }
            Depth::Version => {
                let label = src.version().expect("version depth");
                let candidate = parent.with_version(label).expect("workflow parent");
                if !same_root && !self.disk_path(dest_key, &candidate).exists() {
                    return Ok(candidate);
                }
                let next = Self::next_version(&parent_disk)?;
                Ok(parent.with_version(next).expect("workflow parent"))
            }
            Depth::File => {
                let name = src.file().expect("file depth").to_string();
                Ok(parent.child(&next_file_name(&name, |candidate| parent_disk.join(candidate).exists()))?)
            }
            Depth::Root | Depth::UseCase => Err(RepoError::CloneForbidden(src.clone())),
        }
    }

    fn write_checked(
        &self,
        principal: &Principal,
        file_path: &RepoPath,
        bytes: &[u8],
        expected_modified: Option<DateTime<Utc>>,
    ) -> Result<RepoEntry, RepoError> {
        let key = self.root_key(principal, file_path.root_kind())?;
        let version = file_path.version_dir().expect("file depth");
        let lock = self.lock_for(&key);
        let _guard = lock.write();
        let vdir = self.disk_path(&key, &version);
        if !vdir.is_dir() {
            return Err(RepoError::NotFound(version.to_string()));
        }
        let disk = self.disk_path(&key, file_path);
        let existing = match fs::read(&disk) {
            Ok(b) => Some(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let is_config = file_path.file().map(|f| f.as_str()) == Some(WorkflowConfig::FILE_NAME);
        let action = match (&existing, is_config) {
            (Some(old), true) if params_only_change(old, bytes) => Action::WriteParams,
            _ => Action::WriteStructure,
        };
        self.authorize(principal, &key, action, file_path)?;
        if let (Some(expected), true) = (expected_modified, existing.is_some()) {
            let current = modified_at(&disk)?;
            if current.timestamp_micros() != expected.timestamp_micros() {
                return Err(RepoError::StaleWrite(file_path.clone()));
            }
        }
        write_atomic(&disk, bytes)?;
        self.entry_for(principal, &key, file_path)
    }

    pub fn upload(
        &self,
        principal: &Principal,
        version_path: &RepoPath,
        file_name: &str,
        bytes: &[u8],
    ) -> Result<RepoEntry, RepoError> {
        if version_path.depth() != Depth::Version {
            return Err(RepoError::NotAVersionDirectory(version_path.clone()));
        }
        let file_path = version_path.child(file_name)?;
        self.write_checked(principal, &file_path, bytes, None)
    }

    /// Overwrites a file, rejecting the write when `expected_modified` is
    /// given and no longer matches the stored modification time.
    pub fn write_file(
        &self,
        principal: &Principal,
        file_path: &RepoPath,
        bytes: &[u8],
        expected_modified: Option<DateTime<Utc>>,
    ) -> Result<RepoEntry, RepoError> {
        if file_path.depth() != Depth::File {
            return Err(RepoError::NotAVersionDirectory(
                file_path.version_dir().unwrap_or_else(|| file_path.clone()),
            ));
        }
        self.write_checked(principal, file_path, bytes, expected_modified)
    }

    pub fn download(&self, principal: &Principal, path: &RepoPath) -> Result<Vec<u8>, RepoError> {
        if path.depth() != Depth::File {
            return Err(RepoError::NotFound(path.to_string()));
        }
        let key = self.root_key(principal, path.root_kind())?;
        self.authorize(principal, &key, Action::Read, path)?;
        if !Self::sees_disabled(principal) && !self.is_enabled(&key, path)? && path.root_kind() == Root::Shared {
            return Err(RepoError::NotFound(path.to_string()));
        }
        let lock = self.lock_for(&key);
        let _guard = lock.read();
        match fs::read(self.disk_path(&key, path)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(RepoError::NotFound(path.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn entry(&self, principal: &Principal, path: &RepoPath) -> Result<RepoEntry, RepoError> {
        let key = self.root_key(principal, path.root_kind())?;
        self.entry_for(principal, &key, path)
    }

    fn entry_for(&self, principal: &Principal, key: &RootKey, path: &RepoPath) -> Result<RepoEntry, RepoError> {
        let disk = self.disk_path(key, path);
        let meta = fs::metadata(&disk).map_err(|_| RepoError::NotFound(path.to_string()))?;
        let kind = match path.depth() {
            Depth::UseCase => EntryKind::UseCase,
            Depth::Workflow => EntryKind::Workflow,
            Depth::Version => EntryKind::Version,
            Depth::File => EntryKind::File,
            Depth::Root => return Err(RepoError::NotFound(path.to_string())),
        };
        let writable = self.allowed(principal, key, Action::WriteStructure, path)
            || (kind == EntryKind::File
                && path.file().map(|f| f.as_str()) == Some(WorkflowConfig::FILE_NAME)
                && self.allowed(principal, key, Action::WriteParams, path));
        Ok(RepoEntry {
            path: path.clone(),
            kind,
            size_bytes: if meta.is_file() { meta.len() } else { 0 },
            modified_at: modified_at(&disk)?,
            writable_by_caller: writable,
            enabled: (kind == EntryKind::Version).then(|| self.is_enabled(key, path).unwrap_or(false)),
        })
    }

    /// Children of `path` the caller may read, sorted by name.
    pub fn list(&self, principal: &Principal, path: &RepoPath) -> Result<Vec<RepoEntry>, RepoError> {
        if path.depth() == Depth::File {
            return Err(RepoError::NotFound(path.to_string()));
        }
        let key = self.root_key(principal, path.root_kind())?;
        let lock = self.lock_for(&key);
        let _guard = lock.read();
        let dir = self.disk_path(&key, path);
        let rd = match fs::read_dir(&dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(RepoError::NotFound(path.to_string())),
            Err(e) => return Err(e.into()),
        };
        if !Self::sees_disabled(principal)
            && path.depth() == Depth::Version
            && !self.is_enabled(&key, path)?
        {
            return Ok(Vec::new());
        }
        let mut names: Vec<String> = rd
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        let mut out = Vec::new();
        for name in names {
            let Ok(child) = path.child(&name) else {
                continue;
            };
            if !self.allowed(principal, &key, Action::Read, &child) {
                continue;
            }
            if child.depth() == Depth::Version && !Self::sees_disabled(principal) && !self.is_enabled(&key, &child)? {
                continue;
            }
            out.push(self.entry_for(principal, &key, &child)?);
        }
        Ok(out)
    }

    /// Loads a version's configuration and scripts for execution. The caller
    /// must be allowed to execute the configuration.
    pub fn load_for_execution(
        &self,
        principal: &Principal,
        config_path: &RepoPath,
        sites: &BTreeSet<SiteId>,
    ) -> Result<ExecutableVersion, RepoError> {
        if config_path.depth() != Depth::File {
            return Err(RepoError::NotFound(config_path.to_string()));
        }
        let key = self.root_key(principal, config_path.root_kind())?;
        self.authorize(principal, &key, Action::Execute, config_path)?;
        let version = config_path.version_dir().expect("file depth");
        let lock = self.lock_for(&key);
        let _guard = lock.read();
        let vdir = self.disk_path(&key, &version);
        let config_bytes = fs::read(self.disk_path(&key, config_path))
            .map_err(|_| RepoError::NotFound(config_path.to_string()))?;
        let mut scripts = FileSet::new();
        for entry in fs::read_dir(&vdir)? {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == WorkflowConfig::FILE_NAME || Segment::parse(&name).is_err() {
                continue;
            }
            scripts.insert(name, fs::read(entry.path())?);
        }
        let ctx = ConfigContext {
            scripts: scripts.keys().cloned().collect(),
            sites: sites.clone(),
        };
        let config = validate_config(&config_bytes, &ctx)?;
        let use_case_key = self
            .use_case_record(&key, config_path)?
            .map(|uc| uc.key)
            .ok_or_else(|| RepoError::NotFound(config_path.use_case_dir().expect("file").to_string()))?;
        Ok(ExecutableVersion {
            version_path: version,
            config,
            scripts,
            use_case_key,
        })
    }

    /// Every path currently stored, for audits.
    pub fn all_paths(&self, principal: &Principal, root: Root) -> Result<Vec<String>, RepoError> {
        let key = self.root_key(principal, root)?;
        let base = self.root_dir(&key);
        let mut out = Vec::new();
        walk(&base, &base, &mut out)?;
        Ok(out
            .into_iter()
            .map(|rel| format!("/{}{}{}", root.as_str(), if rel.is_empty() { "" } else { "/" }, rel))
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct ExecutableVersion {
    pub version_path: RepoPath,
    pub config: WorkflowConfig,
    pub scripts: FileSet,
    pub use_case_key: UseCaseKey,
}

fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let rel = entry
            .path()
            .strip_prefix(base)
            .expect("under base")
            .to_string_lossy()
            .into_owned();
        out.push(rel);
        if entry.file_type()?.is_dir() {
            walk(base, &entry.path(), out)?;
        }
    }
    Ok(())
}

fn modified_at(path: &Path) -> Result<DateTime<Utc>, RepoError> {
    let m = fs::metadata(path)?.modified()?;
    Ok(DateTime::<Utc>::from(m))
}

fn copy_recursively(src: &Path, dest: &Path) -> io::Result<()> {
    if src.is_dir() {
        fs::create_dir_all(dest)?;
        for entry in fs::read_dir(src)? {
            let entry = entry?;
            copy_recursively(&entry.path(), &dest.join(entry.file_name()))?;
        }
        Ok(())
    } else {
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(src, dest).map(|_| ())
    }
}

/// Maps `path`, which lies under (or above) `from`, to the same position under `to`.
fn remap(path: &RepoPath, from: &RepoPath, to: &RepoPath) -> Option<RepoPath> {
    if !path.starts_with(from) {
        return None;
    }
    let extra = &path.segments()[from.segments().len()..];
    let mut out = to.clone();
    for seg in extra {
        out = out.child(seg).ok()?;
    }
    Some(out)
}

/// `ive1.py` -> `ive2.py`: strip trailing digits from the stem and pick the
/// lowest unused positive suffix.
pub fn next_file_name(name: &str, exists: impl Fn(&str) -> bool) -> String {
    let (stem, ext) = match name.rfind('.') {
        Some(i) if i > 0 => (&name[..i], &name[i..]),
        _ => (name, ""),
    };
    let base = stem.trim_end_matches(|c: char| c.is_ascii_digit());
    (1u64..)
        .map(|n| format!("{base}{n}{ext}"))
        .find(|candidate| candidate != name && !exists(candidate))
        .expect("unbounded search")
}
