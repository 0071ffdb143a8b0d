//! Task lifecycle: submission, dispatch, checkpoints, progress, logs,
//! cancel and rerun, and collection of results.

mod log;
mod progress;
mod queue;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, watch, Notify};
use tokio_util::sync::CancellationToken;

pub use self::log::LogStore;
pub use progress::{progress_for, SENT_BASE, SENT_SPAN};
pub use queue::TaskQueue;

use crate::analytics::{AnalyticsError, ResultTable, TableManifest};
use crate::auth::AuthService;
use crate::domain::{
    Action, LogEntry, LogStream, ParamMap, Principal, RepoPath, Resource, SiteId, StepOutput, Task, TaskId, TaskState,
};
use crate::orchestrator::{self, ExecuteError, ExecutionObserver, ExecutionRequest, SiteClient};
use crate::repo::{write_atomic, RepoError, RepoStore};

pub const DEFAULT_SITE_CONCURRENCY: usize = 2;
pub const OUTCOME_FILE: &str = "_outcome.json";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("task `{0}` not found")]
    NotFound(String),
    #[error("task is {0}; results exist only for complete tasks")]
    NotComplete(TaskState),
    #[error("task is already {0}")]
    AlreadyTerminal(TaskState),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: TaskState, to: TaskState },
    #[error(transparent)]
    Repo(RepoError),
    #[error("result artifact `{0}` not found")]
    ArtifactNotFound(String),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("task store i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for TaskError {
    fn from(e: std::io::Error) -> Self {
        TaskError::Io(e.to_string())
    }
}

impl From<RepoError> for TaskError {
    fn from(e: RepoError) -> Self {
        match e {
            RepoError::PermissionDenied(m) => TaskError::PermissionDenied(m),
            RepoError::Config(c) => TaskError::InvalidConfig(c.to_string()),
            other => TaskError::Repo(other),
        }
    }
}

/// Source of the site ids a configuration may reference.
pub trait SiteRegistry: Send + Sync {
    fn site_ids(&self) -> BTreeSet<SiteId>;
}

impl SiteRegistry for BTreeSet<SiteId> {
    fn site_ids(&self) -> BTreeSet<SiteId> {
        self.clone()
    }
}

#[derive(Clone, Debug)]
pub struct TaskManagerConfig {
    pub state_dir: PathBuf,
    pub site_concurrency: usize,
    /// Upper bound on how long cancel waits for the terminate fan-out.
    pub cancel_wait: Duration,
}

impl TaskManagerConfig {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        TaskManagerConfig {
            state_dir: state_dir.into(),
            site_concurrency: DEFAULT_SITE_CONCURRENCY,
            cancel_wait: Duration::from_secs(30),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredTask {
    task: Task,
    results_destination: String,
    sites: Vec<SiteId>,
    planned_steps: usize,
    completed_steps: usize,
}

struct Live {
    stored: StoredTask,
    logs: Vec<LogEntry>,
    cancel: CancellationToken,
    state: watch::Sender<TaskState>,
    worker_running: watch::Sender<bool>,
}

struct Inner {
    config: TaskManagerConfig,
    repo: Arc<RepoStore>,
    auth: Arc<AuthService>,
    sites: Arc<dyn SiteRegistry>,
    client: Arc<dyn SiteClient>,
    tasks: Mutex<BTreeMap<TaskId, Live>>,
    queue: Mutex<TaskQueue>,
    wake: Notify,
    logs: LogStore,
    events: broadcast::Sender<LogEntry>,
    illegal: AtomicUsize,
    started: AtomicBool,
}

/// Outcome summary written next to stored results.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResultSummary {
    pub task_id: TaskId,
    pub iterations: u32,
    pub metric_history: Vec<f64>,
    pub steps_run: usize,
    pub metrics: BTreeMap<String, BTreeMap<String, f64>>,
    pub artifacts: Vec<String>,
}

#[derive(Clone)]
pub struct TaskManager {
    inner: Arc<Inner>,
}

impl TaskManager {
    /// Opens the task store. Tasks left non-terminal by a previous process
    /// are failed rather than re-executed.
    pub fn open(
        config: TaskManagerConfig,
        repo: Arc<RepoStore>,
        auth: Arc<AuthService>,
        sites: Arc<dyn SiteRegistry>,
        client: Arc<dyn SiteClient>,
    ) -> Result<Self, TaskError> {
        let tasks_dir = config.state_dir.join("tasks");
        fs::create_dir_all(&tasks_dir)?;
        fs::create_dir_all(config.state_dir.join("results"))?;
        let logs = LogStore::open(config.state_dir.join("logs"))?;
        let (events, _) = broadcast::channel(4096);
        let inner = Arc::new(Inner {
            queue: Mutex::new(TaskQueue::new(config.site_concurrency)),
            config,
            repo,
            auth,
            sites,
            client,
            tasks: Mutex::new(BTreeMap::new()),
            wake: Notify::new(),
            logs,
            events,
            illegal: AtomicUsize::new(0),
            started: AtomicBool::new(false),
        });
        let mut recovered = Vec::new();
        for entry in fs::read_dir(&tasks_dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let stored: StoredTask =
                serde_json::from_slice(&fs::read(&path)?).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
            let id = stored.task.task_id.clone();
            let logs = inner.logs.read(&id)?;
            let state = stored.task.state;
            inner.tasks.lock().insert(
                id.clone(),
                Live {
                    stored,
                    logs,
                    cancel: CancellationToken::new(),
                    state: watch::channel(state).0,
                    worker_running: watch::channel(false).0,
                },
            );
            if !state.is_terminal() {
                recovered.push((id, state));
            }
        }
        let manager = TaskManager { inner };
        for (id, state) in recovered {
            let mut tasks = manager.inner.tasks.lock();
            let live = tasks.get_mut(&id).expect("just loaded");
            manager.inner.append(live, LogStream::Error, None, format!(
                "middleware restarted while the task was {state}; it is not re-executed"
            ));
            manager
                .inner
                .transition(live, TaskState::Failed, "interrupted by middleware restart".into())?;
        }
        Ok(manager)
    }

    /// Spawns the dispatcher on the current runtime. Idempotent.
    pub fn start(&self) {
        if self.inner.started.swap(true, Ordering::SeqCst) {
            return;
        }
        let inner = self.inner.clone();
        tokio::spawn(async move { Inner::dispatch_loop(inner).await });
    }

    pub fn submit(&self, principal: &Principal, config_path: &RepoPath, overrides: ParamMap) -> Result<Task, TaskError> {
        let sites = self.inner.sites.site_ids();
        let exe = self.inner.repo.load_for_execution(principal, config_path, &sites)?;
        if !self.inner.auth.has_key(&exe.config.credential_ref) {
            return Err(TaskError::InvalidConfig(format!(
                "credential_ref `{}` does not name an issued key",
                exe.config.credential_ref
            )));
        }
        let config = exe.config.with_overrides(&overrides);
        let plan = orchestrator::plan(&config).map_err(|e| TaskError::InvalidConfig(e.to_string()))?;

        let mut tasks = self.inner.tasks.lock();
        let task_id = loop {
            let id = TaskId::generate();
            if !tasks.contains_key(&id) {
                break id;
            }
        };
        let task = Task {
            task_id: task_id.clone(),
            user: principal.user_id.clone(),
            use_case_key: exe.use_case_key,
            version_path: exe.version_path,
            config_path: config_path.clone(),
            state: TaskState::Queued,
            checkpoints: Vec::new(),
            progress: progress_for(TaskState::Queued, 0, 0),
            result_ref: None,
            parameters: overrides,
            submitted_at: Utc::now(),
        };
        let mut live = Live {
            stored: StoredTask {
                task,
                results_destination: config.results_destination.clone(),
                sites: plan.sites.clone(),
                planned_steps: plan.planned_steps(),
                completed_steps: 0,
            },
            logs: Vec::new(),
            cancel: CancellationToken::new(),
            state: watch::channel(TaskState::Queued).0,
            worker_running: watch::channel(false).0,
        };
        self.inner.append(
            &mut live,
            LogStream::Runtime,
            Some(TaskState::Queued),
            format!("queued {config_path} for {}", principal.user_id),
        );
        self.inner.persist(&live.stored)?;
        let snapshot = live.stored.task.clone();
        tasks.insert(task_id.clone(), live);
        drop(tasks);
        self.inner.queue.lock().push(task_id, plan.sites);
        self.inner.wake.notify_one();
        Ok(snapshot)
    }

    fn authorize(&self, principal: &Principal, action: Action, owner: &crate::domain::UserId) -> Result<(), TaskError> {
        self.inner
            .auth
            .authorize(principal, action, &Resource::Task { owner: owner.clone() })
            .into_result()
            .map_err(|e| TaskError::PermissionDenied(e.to_string()))
    }

    fn snapshot(&self, id: &TaskId) -> Result<Task, TaskError> {
        self.inner
            .tasks
            .lock()
            .get(id)
            .map(|l| l.stored.task.clone())
            .ok_or_else(|| TaskError::NotFound(id.to_string()))
    }

    pub fn get(&self, principal: &Principal, id: &TaskId) -> Result<Task, TaskError> {
        let task = self.snapshot(id)?;
        self.authorize(principal, Action::Read, &task.user)?;
        Ok(task)
    }

    /// Tasks the caller may read, in submission order.
    pub fn list(&self, principal: &Principal) -> Vec<Task> {
        let mut out: Vec<Task> = self
            .inner
            .tasks
            .lock()
            .values()
            .map(|l| l.stored.task.clone())
            .filter(|t| self.authorize(principal, Action::Read, &t.user).is_ok())
            .collect();
        out.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.task_id.cmp(&b.task_id)));
        out
    }

    /// Moves a task to `next`. Illegal moves are logged to the error
    /// stream and leave the state unchanged.
    pub fn advance(&self, id: &TaskId, next: TaskState, message: &str) -> Result<Task, TaskError> {
        let mut tasks = self.inner.tasks.lock();
        let live = tasks.get_mut(id).ok_or_else(|| TaskError::NotFound(id.to_string()))?;
        self.inner.transition(live, next, message.to_string())?;
        Ok(live.stored.task.clone())
    }

    pub fn progress(&self, id: &TaskId) -> Result<f64, TaskError> {
        Ok(self.snapshot(id)?.progress)
    }

    pub fn cancel(&self, principal: &Principal, id: &TaskId) -> impl std::future::Future<Output = Result<Task, TaskError>> + Send + 'static {
        let this = self.clone();
        let principal = principal.clone();
        let id = id.clone();
        async move { this.cancel_inner(&principal, &id).await }
    }

    async fn cancel_inner(&self, principal: &Principal, id: &TaskId) -> Result<Task, TaskError> {
        let owner = self.snapshot(id)?.user;
        self.authorize(principal, Action::Execute, &owner)?;
        let mut running = {
            let mut tasks = self.inner.tasks.lock();
            let live = tasks.get_mut(id).ok_or_else(|| TaskError::NotFound(id.to_string()))?;
            let state = live.stored.task.state;
            if state.is_terminal() {
                return Err(TaskError::AlreadyTerminal(state));
            }
            self.inner
                .transition(live, TaskState::Canceled, format!("canceled by {}", principal.user_id))?;
            live.cancel.cancel();
            live.worker_running.subscribe()
        };
        if self.inner.queue.lock().remove(id) {
            self.inner.wake.notify_one();
        }
        let _ = tokio::time::timeout(self.inner.config.cancel_wait, running.wait_for(|r| !r)).await;
        self.snapshot(id)
    }

    /// Cancels `id` if it is still running, then submits the same
    /// configuration again with `overrides` merged over its parameters.
    pub async fn rerun(&self, principal: &Principal, id: &TaskId, overrides: ParamMap) -> Result<Task, TaskError> {
        let source = self.snapshot(id)?;
        self.authorize(principal, Action::Execute, &source.user)?;
        if !source.state.is_terminal() {
            match self.cancel_inner(principal, id).await {
                Ok(_) | Err(TaskError::AlreadyTerminal(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let mut params = source.parameters.clone();
        params.extend(overrides);
        self.submit(principal, &source.config_path, params)
    }

    pub fn logs(&self, principal: &Principal, id: &TaskId, stream: Option<LogStream>) -> Result<Vec<LogEntry>, TaskError> {
        let tasks = self.inner.tasks.lock();
        let live = tasks.get(id).ok_or_else(|| TaskError::NotFound(id.to_string()))?;
        let owner = live.stored.task.user.clone();
        let logs: Vec<LogEntry> = live
            .logs
            .iter()
            .filter(|e| stream.is_none_or(|s| e.stream == s))
            .cloned()
            .collect();
        drop(tasks);
        self.authorize(principal, Action::Read, &owner)?;
        Ok(logs)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<LogEntry> {
        self.inner.events.subscribe()
    }

    pub fn result_ref(&self, principal: &Principal, id: &TaskId) -> Result<String, TaskError> {
        let task = self.get(principal, id)?;
        match (task.state, task.result_ref) {
            (TaskState::Complete, Some(r)) => Ok(r),
            (state, _) => Err(TaskError::NotComplete(state)),
        }
    }

    fn result_dir_for(&self, principal: &Principal, result_ref: &str) -> Result<PathBuf, TaskError> {
        let id = TaskId::new(result_ref);
        if !id.is_well_formed() {
            return Err(TaskError::NotFound(result_ref.to_string()));
        }
        self.result_ref(principal, &id)?;
        let destination = self.inner.tasks.lock()[&id].stored.results_destination.clone();
        Ok(self.inner.results_dir(&destination, &id))
    }

    /// Names of the artifacts stored for a result.
    pub fn result_artifacts(&self, principal: &Principal, result_ref: &str) -> Result<Vec<String>, TaskError> {
        let dir = self.result_dir_for(principal, result_ref)?;
        let mut out = Vec::new();
        collect_files(&dir, &dir, &mut out)?;
        out.sort();
        Ok(out)
    }

    pub fn read_result_artifact(&self, principal: &Principal, result_ref: &str, name: &str) -> Result<Vec<u8>, TaskError> {
        let dir = self.result_dir_for(principal, result_ref)?;
        let safe = !name.is_empty()
            && name
                .split('/')
                .all(|seg| crate::domain::Segment::parse(seg).is_ok());
        if !safe {
            return Err(TaskError::ArtifactNotFound(name.to_string()));
        }
        fs::read(dir.join(name)).map_err(|_| TaskError::ArtifactNotFound(name.to_string()))
    }

    pub fn result_summary(&self, principal: &Principal, result_ref: &str) -> Result<ResultSummary, TaskError> {
        let bytes = self.read_result_artifact(principal, result_ref, OUTCOME_FILE)?;
        serde_json::from_slice(&bytes).map_err(|e| TaskError::Io(e.to_string()))
    }

    /// Loads a tabular result. Without `artifact` the first CSV is used; a
    /// `<name>.manifest.json` sidecar supplies declared column types.
    pub fn result_table(&self, principal: &Principal, result_ref: &str, artifact: Option<&str>) -> Result<ResultTable, TaskError> {
        let names = self.result_artifacts(principal, result_ref)?;
        let name = match artifact {
            Some(a) => a.to_string(),
            None => names
                .iter()
                .find(|n| n.ends_with(".csv"))
                .cloned()
                .ok_or_else(|| TaskError::ArtifactNotFound("*.csv".into()))?,
        };
        let bytes = self.read_result_artifact(principal, result_ref, &name)?;
        let stem = name.strip_suffix(".csv").unwrap_or(&name);
        let sidecar = ResultTable::manifest_file_name(stem);
        if names.contains(&sidecar) {
            let manifest: TableManifest = serde_json::from_slice(&self.read_result_artifact(principal, result_ref, &sidecar)?)
                .map_err(|e| TaskError::Analytics(AnalyticsError::ManifestMismatch(e.to_string())))?;
            return Ok(ResultTable::from_csv_with_manifest(&bytes, &manifest)?);
        }
        let table_name = stem.rsplit('/').next().unwrap_or(stem);
        Ok(ResultTable::from_csv(table_name, &bytes)?)
    }

    /// Resolves once the task is terminal, or after `timeout`.
    pub async fn wait_terminal(&self, id: &TaskId, timeout: Duration) -> Result<Task, TaskError> {
        let mut rx = {
            let tasks = self.inner.tasks.lock();
            tasks.get(id).ok_or_else(|| TaskError::NotFound(id.to_string()))?.state.subscribe()
        };
        let _ = tokio::time::timeout(timeout, rx.wait_for(|s| s.is_terminal())).await;
        self.snapshot(id)
    }

    /// Illegal transitions attempted since this manager opened.
    pub fn illegal_transitions(&self) -> usize {
        self.inner.illegal.load(Ordering::SeqCst)
    }

    pub fn queued(&self) -> Vec<TaskId> {
        self.inner.queue.lock().pending()
    }
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_files(base, &path, out)?;
        } else {
            out.push(path.strip_prefix(base).expect("under base").to_string_lossy().into_owned());
        }
    }
    Ok(())
}

impl Inner {
    fn results_dir(&self, destination: &str, id: &TaskId) -> PathBuf {
        self.config.state_dir.join("results").join(destination).join(id.as_str())
    }

    fn persist(&self, stored: &StoredTask) -> Result<(), TaskError> {
        let path = self
            .config
            .state_dir
            .join("tasks")
            .join(format!("{}.json", stored.task.task_id));
        write_atomic(&path, &serde_json::to_vec(stored).expect("task serializes"))?;
        Ok(())
    }

    fn append(&self, live: &mut Live, stream: LogStream, checkpoint: Option<TaskState>, message: String) {
        let now = Utc::now();
        let timestamp = live.logs.last().map_or(now, |l| l.timestamp.max(now));
        let entry = LogEntry {
            seq: live.logs.len() as u64,
            task_id: live.stored.task.task_id.clone(),
            timestamp,
            stream,
            checkpoint,
            message,
        };
        if let Err(e) = self.logs.append(&entry) {
            tracing::warn!(task = %entry.task_id, "log append failed: {e}");
        }
        if checkpoint.is_some() {
            live.stored.task.checkpoints.push(entry.clone());
        }
        let _ = self.events.send(entry.clone());
        live.logs.push(entry);
    }

    fn transition(&self, live: &mut Live, next: TaskState, message: String) -> Result<(), TaskError> {
        let from = live.stored.task.state;
        if !from.can_transition_to(next) {
            self.illegal.fetch_add(1, Ordering::SeqCst);
            self.append(live, LogStream::Error, None, format!("illegal transition {from} -> {next}: {message}"));
            return Err(TaskError::IllegalTransition { from, to: next });
        }
        let task = &mut live.stored.task;
        task.state = next;
        if !matches!(next, TaskState::Canceled | TaskState::Failed) {
            let p = progress_for(next, live.stored.completed_steps, live.stored.planned_steps);
            task.progress = task.progress.max(p);
        }
        let stream = if next == TaskState::Failed {
            LogStream::Error
        } else {
            LogStream::Runtime
        };
        self.append(live, stream, Some(next), message);
        live.state.send_replace(next);
        self.persist(&live.stored)
    }

    /// Worker-side transition: `None` when the task already reached a
    /// terminal state (such as a concurrent cancel), so the worker stops.
    fn step(&self, id: &TaskId, next: TaskState, message: String) -> Option<()> {
        let mut tasks = self.tasks.lock();
        let live = tasks.get_mut(id)?;
        if live.stored.task.state.is_terminal() {
            return None;
        }
        self.transition(live, next, message).ok()
    }

    fn fail(&self, id: &TaskId, message: String) {
        let mut tasks = self.tasks.lock();
        if let Some(live) = tasks.get_mut(id) {
            if live.stored.task.state.is_terminal() {
                return;
            }
            self.append(live, LogStream::Error, None, message.clone());
            let _ = self.transition(live, TaskState::Failed, message);
        }
    }

    async fn dispatch_loop(inner: Arc<Inner>) {
        loop {
            let next = inner.queue.lock().next_ready();
            let Some((id, sites)) = next else {
                inner.wake.notified().await;
                continue;
            };
            if let Some(live) = inner.tasks.lock().get(&id) {
                live.worker_running.send_replace(true);
            }
            let worker = inner.clone();
            tokio::spawn(async move {
                worker.run(&id).await;
                worker.queue.lock().release(&sites);
                if let Some(live) = worker.tasks.lock().get(&id) {
                    live.worker_running.send_replace(false);
                }
                worker.wake.notify_one();
            });
        }
    }

    async fn run(self: &Arc<Self>, id: &TaskId) {
        let Some((user, config_path, params, cancel)) = self.tasks.lock().get(id).map(|l| {
            let t = &l.stored.task;
            (t.user.clone(), t.config_path.clone(), t.parameters.clone(), l.cancel.clone())
        }) else {
            return;
        };
        let version = config_path.version_dir().map(|v| v.to_string()).unwrap_or_default();
        if self
            .step(id, TaskState::Queuing, format!("retrieving scripts from {version}"))
            .is_none()
        {
            return;
        }
        let Some(principal) = self.auth.principal(&user) else {
            return self.fail(id, format!("principal {user} no longer exists"));
        };
        let exe = match self.repo.load_for_execution(&principal, &config_path, &self.sites.site_ids()) {
            Ok(exe) => exe,
            Err(e) => return self.fail(id, format!("loading {config_path}: {e}")),
        };
        let config = exe.config.with_overrides(&params);
        let plan = match orchestrator::plan(&config) {
            Ok(p) => p,
            Err(e) => return self.fail(id, format!("planning: {e}")),
        };
        {
            let mut tasks = self.tasks.lock();
            if let Some(live) = tasks.get_mut(id) {
                live.stored.planned_steps = plan.planned_steps();
                live.stored.sites = plan.sites.clone();
            }
        }
        let shape = if plan.is_iterative() { "iterative" } else { "single-pass" };
        let created = format!(
            "created {shape} plan over {} sites, {} planned steps",
            plan.sites.len(),
            plan.planned_steps()
        );
        if self.step(id, TaskState::Created, created).is_none() {
            return;
        }
        let site_list = plan.sites.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",");
        if self
            .step(id, TaskState::Sending, format!("transferring task to {site_list}"))
            .is_none()
        {
            return;
        }
        let request = ExecutionRequest {
            task_id: id.clone(),
            user,
            plan,
            config: config.clone(),
            scripts: exe.scripts,
            task_inputs: Default::default(),
            cancel,
        };
        if self.step(id, TaskState::Sent, format!("sent to {site_list}")).is_none() {
            return;
        }
        let observer = Observer {
            inner: self.clone(),
            id: id.clone(),
        };
        match orchestrator::execute(&request, self.client.clone(), &observer).await {
            Ok(outcome) => {
                let summary = ResultSummary {
                    task_id: id.clone(),
                    iterations: outcome.iterations,
                    metric_history: outcome.metric_history.clone(),
                    steps_run: outcome.steps_run,
                    metrics: outcome
                        .final_outputs
                        .iter()
                        .map(|o| (o.site_id.to_string(), o.metrics.clone()))
                        .collect(),
                    artifacts: Vec::new(),
                };
                let dir = self.results_dir(&config.results_destination, id);
                let stored = store_results(&dir, &outcome.final_outputs, summary);
                let mut tasks = self.tasks.lock();
                let Some(live) = tasks.get_mut(id) else { return };
                if live.stored.task.state.is_terminal() {
                    return;
                }
                match stored {
                    Ok(count) => {
                        live.stored.task.result_ref = Some(id.to_string());
                        let message = format!(
                            "complete: {count} artifacts in {} after {} iterations",
                            config.results_destination, outcome.iterations
                        );
                        if self.transition(live, TaskState::Complete, message).is_err() {
                            live.stored.task.result_ref = None;
                        }
                    }
                    Err(e) => {
                        drop(tasks);
                        self.fail(id, format!("storing results: {e}"));
                    }
                }
            }
            Err(ExecuteError::Canceled) => {}
            Err(e) => self.fail(id, e.to_string()),
        }
    }
}

fn store_results(dir: &Path, outputs: &[StepOutput], mut summary: ResultSummary) -> std::io::Result<usize> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    let nested = outputs.len() > 1;
    for out in outputs {
        let target = if nested { dir.join(out.site_id.as_str()) } else { dir.to_path_buf() };
        fs::create_dir_all(&target)?;
        for (name, bytes) in &out.artifacts {
            write_atomic(&target.join(name), bytes)?;
            summary.artifacts.push(if nested {
                format!("{}/{name}", out.site_id)
            } else {
                name.clone()
            });
        }
    }
    write_atomic(
        &dir.join(OUTCOME_FILE),
        &serde_json::to_vec_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary.artifacts.len())
}

struct Observer {
    inner: Arc<Inner>,
    id: TaskId,
}

impl ExecutionObserver for Observer {
    fn step_finished(&self, output: &StepOutput, completed: usize, _planned: usize) {
        let mut tasks = self.inner.tasks.lock();
        let Some(live) = tasks.get_mut(&self.id) else { return };
        if live.stored.task.state != TaskState::Sent {
            return;
        }
        live.stored.completed_steps = live.stored.completed_steps.max(completed);
        let p = progress_for(TaskState::Sent, live.stored.completed_steps, live.stored.planned_steps);
        live.stored.task.progress = live.stored.task.progress.max(p);
        let metrics = output
            .metrics
            .iter()
            .map(|(k, v)| format!(" {k}={v}"))
            .collect::<String>();
        self.inner.append(
            live,
            LogStream::Runtime,
            None,
            format!(
                "step {} on {} finished (iteration {}){metrics}",
                output.step_index, output.site_id, output.iteration
            ),
        );
        let _ = self.inner.persist(&live.stored);
    }

    fn log(&self, message: &str) {
        let mut tasks = self.inner.tasks.lock();
        if let Some(live) = tasks.get_mut(&self.id) {
            self.inner.append(live, LogStream::Runtime, None, message.to_string());
        }
    }
}
