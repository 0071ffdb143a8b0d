//! Step execution, per-task state and local storage on one site.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio_util::sync::CancellationToken;

use fabric_core::auth::{AuthService, RequestSigner};
use fabric_core::domain::{
    parse_metrics, render_command_file, Command, DatasetId, FileSet, Principal, Role, Segment,
    SiteId, StepBundle, StepOutput, TaskId, UserId, COMMAND_FILE,
};
use fabric_core::orchestrator::artifact_base_name;

use crate::catalog::{DatasetCatalog, DatasetRecord};
use crate::config::{AgentConfig, ConfigError};
use crate::runner::{run_script, PacRunnerSpec, RunError};
use crate::AgentError;

pub const METRICS_FILE: &str = "metrics";
pub const PARAMS_FILE: &str = "params.json";
pub const OUT_DIR: &str = "out";
pub const IN_DIR: &str = "in";
pub const DATA_DIR: &str = "data";
/// Per-task store that persists across the task's steps and iterations.
pub const LOCAL_DIR: &str = "local";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteTaskState {
    Active,
    /// Released by a Terminate command at the end of the workflow.
    Finished,
    /// Aborted through the terminate endpoint.
    Terminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepState {
    Running,
    Done,
    Failed,
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u32,
    pub step_index: usize,
    pub script: String,
    pub command: Command,
    pub state: StepState,
    pub exit_code: Option<i32>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStatus {
    pub task_id: TaskId,
    pub site_id: SiteId,
    pub state: SiteTaskState,
    pub keep_local_copy: bool,
    pub steps: Vec<StepRecord>,
    /// Whether the task's working tree still exists on disk.
    pub workdir_present: bool,
}

struct TaskSlot {
    serial: tokio::sync::Mutex<()>,
    cancel: CancellationToken,
    status: Mutex<TaskStatus>,
    last_stamp: Mutex<i64>,
}

pub struct SiteAgent {
    site_id: SiteId,
    work_dir: PathBuf,
    catalog: DatasetCatalog,
    runner: PacRunnerSpec,
    auth: Arc<AuthService>,
    middleware_user: UserId,
    tasks: Mutex<BTreeMap<TaskId, Arc<TaskSlot>>>,
    permits: Semaphore,
}

/// A relative artifact path whose every component is a valid segment.
fn safe_relative(name: &str) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for part in name.split('/') {
        out.push(Segment::parse(part).ok()?.as_str());
    }
    (!name.is_empty()).then_some(out)
}

fn env_name(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut FileSet) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let kind = entry.file_type()?;
        if kind.is_dir() {
            collect_files(root, &path, out)?;
        } else if kind.is_file() {
            let rel = path.strip_prefix(root).expect("under root");
            let name = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(name, fs::read(&path)?);
        }
    }
    Ok(())
}

impl SiteAgent {
    pub fn new(
        site_id: SiteId,
        work_dir: impl Into<PathBuf>,
        catalog: DatasetCatalog,
        runner: PacRunnerSpec,
        auth: Arc<AuthService>,
        middleware_user: UserId,
        parallelism: usize,
    ) -> Result<Self, AgentError> {
        let work_dir = work_dir.into();
        fs::create_dir_all(&work_dir)?;
        Ok(SiteAgent {
            site_id,
            work_dir: work_dir.canonicalize()?,
            catalog,
            runner,
            auth,
            middleware_user,
            tasks: Mutex::new(BTreeMap::new()),
            permits: Semaphore::new(parallelism.max(1)),
        })
    }

    /// Builds an agent from its configuration, installing the middleware
    /// and owner credentials in an in-memory key table.
    pub fn from_config(cfg: &AgentConfig) -> Result<Self, ConfigStartError> {
        let auth = Arc::new(AuthService::in_memory());
        let mw = &cfg.middleware;
        auth.install_principal(Principal::new(mw.user.clone(), []));
        auth.install_key(mw.key_id.clone(), &mw.load_secret()?, mw.user.clone());
        for owner in &cfg.owners {
            auth.install_principal(
                Principal::new(owner.user.clone(), [Role::DataOwner]).owning([cfg.site_id.clone()]),
            );
            auth.install_key(owner.key_id.clone(), &owner.load_secret()?, owner.user.clone());
        }
        fs::create_dir_all(&cfg.state_dir).map_err(AgentError::from)?;
        let catalog = DatasetCatalog::open(
            cfg.site_id.clone(),
            &cfg.data_root,
            Some(cfg.state_dir.join("catalog.json")),
        )?;
        Ok(SiteAgent::new(
            cfg.site_id.clone(),
            &cfg.work_dir,
            catalog,
            cfg.runner.clone(),
            auth,
            mw.user.clone(),
            cfg.parallelism,
        )?)
    }

    pub fn site_id(&self) -> &SiteId {
        &self.site_id
    }

    pub fn auth(&self) -> &AuthService {
        &self.auth
    }

    pub fn catalog(&self) -> &DatasetCatalog {
        &self.catalog
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }

    pub fn task_dir(&self, task: &TaskId) -> PathBuf {
        self.work_dir.join(task.as_str())
    }

    /// A signer for a key installed on this agent, for tests and tooling.
    pub fn signer_for(&self, key: &fabric_core::domain::KeyId) -> Option<RequestSigner> {
        self.auth.signer_for(key)
    }

    fn require_middleware(&self, principal: &Principal) -> Result<(), AgentError> {
        if principal.user_id == self.middleware_user || principal.admin {
            Ok(())
        } else {
            Err(AgentError::PermissionDenied(format!(
                "{} may not drive steps on {}",
                principal.user_id, self.site_id
            )))
        }
    }

    fn slot(&self, task: &TaskId, keep: bool) -> Arc<TaskSlot> {
        self.tasks
            .lock()
            .entry(task.clone())
            .or_insert_with(|| {
                Arc::new(TaskSlot {
                    serial: tokio::sync::Mutex::new(()),
                    cancel: CancellationToken::new(),
                    status: Mutex::new(TaskStatus {
                        task_id: task.clone(),
                        site_id: self.site_id.clone(),
                        state: SiteTaskState::Active,
                        keep_local_copy: keep,
                        steps: Vec::new(),
                        workdir_present: false,
                    }),
                    last_stamp: Mutex::new(0),
                })
            })
            .clone()
    }

    fn existing_slot(&self, task: &TaskId) -> Result<Arc<TaskSlot>, AgentError> {
        self.tasks
            .lock()
            .get(task)
            .cloned()
            .ok_or_else(|| AgentError::NotFound(format!("task {task} on {}", self.site_id)))
    }

    pub fn status(&self, principal: &Principal, task: &TaskId) -> Result<TaskStatus, AgentError> {
        self.require_middleware(principal)?;
        let slot = self.existing_slot(task)?;
        let mut status = slot.status.lock().clone();
        status.workdir_present = self.task_dir(task).exists();
        Ok(status)
    }

    /// Aborts a task: stops any running step and releases its storage
    /// unless the task asked to keep a local copy.
    pub async fn terminate(&self, principal: &Principal, task: &TaskId) -> Result<TaskStatus, AgentError> {
        self.require_middleware(principal)?;
        let slot = self.existing_slot(task)?;
        slot.cancel.cancel();
        let _serial = slot.serial.lock().await;
        let keep = {
            let mut st = slot.status.lock();
            if st.state == SiteTaskState::Active {
                st.state = SiteTaskState::Terminated;
            }
            st.keep_local_copy
        };
        if !keep {
            remove_tree(&self.task_dir(task))?;
        }
        drop(_serial);
        self.status(principal, task)
    }

    pub fn register_dataset(
        &self,
        owner: &Principal,
        id: DatasetId,
        locator: &str,
    ) -> Result<DatasetRecord, AgentError> {
        Segment::parse(id.as_str()).map_err(AgentError::BadRequest)?;
        self.catalog.register(&self.auth, owner, id, locator)
    }

    pub fn grant_dataset(&self, owner: &Principal, id: &DatasetId, user: UserId) -> Result<DatasetRecord, AgentError> {
        self.catalog.grant(&self.auth, owner, id, user)
    }

    pub fn datasets(&self) -> Vec<DatasetRecord> {
        self.catalog.list()
    }

    /// Runs one step of a task. Artifacts come back; datasets never leave.
    pub async fn run_step(&self, principal: &Principal, bundle: StepBundle) -> Result<StepOutput, AgentError> {
        self.require_middleware(principal)?;
        if bundle.site_id != self.site_id {
            return Err(AgentError::BadRequest(format!(
                "bundle addressed to {} reached {}",
                bundle.site_id, self.site_id
            )));
        }
        if !bundle.task_id.is_well_formed() {
            return Err(AgentError::BadRequest(format!("malformed task id `{}`", bundle.task_id)));
        }
        let slot = self.slot(&bundle.task_id, bundle.keep_local_copy);
        if slot.status.lock().state != SiteTaskState::Active {
            return Err(AgentError::Terminated);
        }
        if bundle.command == Command::Terminate {
            return self.finish(&slot, &bundle).await;
        }
        let mut datasets = Vec::with_capacity(bundle.dataset_ids.len());
        for id in &bundle.dataset_ids {
            Segment::parse(id.as_str()).map_err(AgentError::BadRequest)?;
            datasets.push((id.clone(), self.catalog.resolve_for(&bundle.user, id)?));
        }
        let _permit = self.permits.acquire().await.expect("semaphore open");
        let _serial = slot.serial.lock().await;
        if slot.cancel.is_cancelled() {
            return Err(AgentError::Terminated);
        }
        let record_index = {
            let mut st = slot.status.lock();
            st.steps.push(StepRecord {
                iteration: bundle.iteration,
                step_index: bundle.step_index,
                script: bundle.script_name.clone(),
                command: bundle.command,
                state: StepState::Running,
                exit_code: None,
                started_at: Utc::now(),
                finished_at: None,
                artifacts: Vec::new(),
                error: None,
            });
            st.steps.len() - 1
        };
        let result = self.execute(&slot, &bundle, &datasets).await;
        let mut st = slot.status.lock();
        let rec = &mut st.steps[record_index];
        rec.finished_at = Some(Utc::now());
        match &result {
            Ok((out, exit)) => {
                rec.state = StepState::Done;
                rec.exit_code = Some(*exit);
                rec.artifacts = out.artifacts.keys().cloned().collect();
            }
            Err(e) => {
                rec.state = if *e == AgentError::Terminated { StepState::Terminated } else { StepState::Failed };
                if let AgentError::ScriptError { exit_code, .. } = e {
                    rec.exit_code = Some(*exit_code);
                }
                rec.error = Some(e.to_string());
            }
        }
        result.map(|(out, _)| out)
    }

    async fn finish(&self, slot: &TaskSlot, bundle: &StepBundle) -> Result<StepOutput, AgentError> {
        let _serial = slot.serial.lock().await;
        let now = Utc::now();
        {
            let mut st = slot.status.lock();
            st.state = SiteTaskState::Finished;
            st.steps.push(StepRecord {
                iteration: bundle.iteration,
                step_index: bundle.step_index,
                script: bundle.script_name.clone(),
                command: Command::Terminate,
                state: StepState::Done,
                exit_code: None,
                started_at: now,
                finished_at: Some(now),
                artifacts: Vec::new(),
                error: None,
            });
        }
        if !bundle.keep_local_copy {
            remove_tree(&self.task_dir(&bundle.task_id))?;
        }
        Ok(StepOutput {
            task_id: bundle.task_id.clone(),
            iteration: bundle.iteration,
            site_id: self.site_id.clone(),
            step_index: bundle.step_index,
            artifacts: FileSet::new(),
            metrics: BTreeMap::new(),
            local_copy_kept: bundle.keep_local_copy,
        })
    }

    fn prepare(&self, bundle: &StepBundle, datasets: &[(DatasetId, PathBuf)]) -> Result<PathBuf, AgentError> {
        let script = Segment::parse(&bundle.script_name).map_err(AgentError::BadRequest)?;
        if !bundle.scripts.contains_key(script.as_str()) {
            return Err(AgentError::BadRequest(format!(
                "bundle does not carry script `{}`",
                bundle.script_name
            )));
        }
        let task_dir = self.task_dir(&bundle.task_id);
        let local = task_dir.join(LOCAL_DIR);
        fs::create_dir_all(&local)?;
        let run = task_dir.join(format!("{}-{}-{}", bundle.iteration, bundle.step_index, script.as_str()));
        remove_tree(&run)?;
        fs::create_dir_all(run.join(OUT_DIR))?;
        fs::create_dir_all(run.join(IN_DIR))?;
        fs::create_dir_all(run.join(DATA_DIR))?;
        std::os::unix::fs::symlink(&local, run.join(LOCAL_DIR))?;
        for (name, bytes) in &bundle.scripts {
            let rel = safe_relative(name)
                .ok_or_else(|| AgentError::BadRequest(format!("bad script name `{name}`")))?;
            write_file(&run.join(rel), bytes)?;
        }
        // Newest copy of each timestamped input wins.
        let mut inputs: BTreeMap<PathBuf, (u64, &[u8])> = BTreeMap::new();
        for (name, bytes) in &bundle.inputs {
            if name == COMMAND_FILE {
                continue;
            }
            let rel = safe_relative(name)
                .filter(|p| p.components().count() >= 2)
                .ok_or_else(|| AgentError::BadRequest(format!("bad input name `{name}`")))?;
            let base = artifact_base_name(name, bundle.timestamp_results);
            let stamp: u64 = name[base.len()..].trim_start_matches('.').parse().unwrap_or(0);
            let target = PathBuf::from(IN_DIR).join(safe_relative(base).unwrap_or(rel));
            match inputs.get(&target) {
                Some((s, _)) if *s > stamp => {}
                _ => {
                    inputs.insert(target, (stamp, bytes));
                }
            }
        }
        for (rel, (_, bytes)) in inputs {
            write_file(&run.join(rel), bytes)?;
        }
        let command_text = bundle
            .inputs
            .get(COMMAND_FILE)
            .cloned()
            .unwrap_or_else(|| render_command_file(bundle.command, bundle.iteration).into_bytes());
        fs::write(run.join(COMMAND_FILE), command_text)?;
        fs::write(
            run.join(PARAMS_FILE),
            serde_json::to_vec_pretty(&bundle.params).expect("params serialize"),
        )?;
        for (id, path) in datasets {
            std::os::unix::fs::symlink(path, run.join(DATA_DIR).join(id.as_str()))?;
        }
        Ok(run)
    }

    fn environment(&self, bundle: &StepBundle, run: &Path) -> Vec<(String, String)> {
        let mut env = vec![
            ("FABRIC_TASK_ID".to_string(), bundle.task_id.to_string()),
            ("FABRIC_SITE_ID".to_string(), self.site_id.to_string()),
            ("FABRIC_ITERATION".to_string(), bundle.iteration.to_string()),
            ("FABRIC_STEP_INDEX".to_string(), bundle.step_index.to_string()),
            ("FABRIC_COMMAND".to_string(), bundle.command.to_string()),
            ("FABRIC_WORKDIR".to_string(), run.display().to_string()),
            (
                "FABRIC_DATASETS".to_string(),
                bundle.dataset_ids.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(","),
            ),
        ];
        for (k, v) in &bundle.params {
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            env.push((format!("FABRIC_PARAM_{}", env_name(k)), text));
        }
        env
    }

    async fn execute(
        &self,
        slot: &TaskSlot,
        bundle: &StepBundle,
        datasets: &[(DatasetId, PathBuf)],
    ) -> Result<(StepOutput, i32), AgentError> {
        let run = self.prepare(bundle, datasets)?;
        let env = self.environment(bundle, &run);
        let outcome = run_script(&self.runner, &run, &bundle.script_name, &env, &slot.cancel).await;
        let collected = match outcome {
            Ok(report) => self.collect(slot, bundle, &run).map(|out| (out, report.exit_code)),
            Err(e) => Err(match e {
                RunError::NoProfile(s) => AgentError::BadRequest(format!("no environment runs `{s}`")),
                RunError::Spawn(m) => AgentError::Sandbox(m),
                RunError::ScriptError { exit_code, stderr_tail } => AgentError::ScriptError { exit_code, stderr_tail },
                RunError::ResourceLimitExceeded { limit, stderr_tail } => {
                    AgentError::ResourceLimitExceeded { limit, stderr_tail }
                }
                RunError::Terminated => AgentError::Terminated,
            }),
        };
        if !bundle.keep_local_copy {
            remove_tree(&run)?;
        }
        collected
    }

    fn collect(&self, slot: &TaskSlot, bundle: &StepBundle, run: &Path) -> Result<StepOutput, AgentError> {
        let mut produced = FileSet::new();
        collect_files(&run.join(OUT_DIR), &run.join(OUT_DIR), &mut produced)?;
        let metrics_path = run.join(METRICS_FILE);
        let metrics = if metrics_path.exists() {
            let text = fs::read_to_string(&metrics_path)?;
            parse_metrics(&text).map_err(|m| AgentError::ScriptError {
                exit_code: 0,
                stderr_tail: format!("malformed metrics file: {m}"),
            })?
        } else {
            BTreeMap::new()
        };
        let artifacts = if bundle.timestamp_results {
            let stamp = {
                let mut last = slot.last_stamp.lock();
                // Strictly increasing per task so later results sort later.
                *last = (*last + 1).max(Utc::now().timestamp_millis());
                *last
            };
            produced.into_iter().map(|(k, v)| (format!("{k}.{stamp}"), v)).collect()
        } else {
            produced
        };
        Ok(StepOutput {
            task_id: bundle.task_id.clone(),
            iteration: bundle.iteration,
            site_id: self.site_id.clone(),
            step_index: bundle.step_index,
            artifacts,
            metrics,
            local_copy_kept: bundle.keep_local_copy,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigStartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), AgentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn remove_tree(path: &Path) -> Result<(), AgentError> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}
