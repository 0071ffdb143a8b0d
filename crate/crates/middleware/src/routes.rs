//! The `/v1` route table and its handlers.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use chrono::{DateTime, Utc};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use fabric_agent::http::{authenticate_request, RequestAuthError, MAX_BODY};
use fabric_core::analytics::{
    apply_transforms, classify_correlation, color_for, correlations, flag_variables, profile_report, recommend,
    ResultTable, Thresholds, TransformationProfile, VariableBounds,
};
use fabric_core::domain::{
    LogEntry, LogStream, ParamMap, Permission, Principal, RepoPath, Role, Root, Segment, SiteId, TaskId, TaskState,
    UserId, WorkflowConfig,
};
use fabric_core::repo::{parse_config, validate_config, validate_references, ConfigContext, EntryKind};

use crate::error::ApiError;
use crate::fabric::Fabric;

/// One public endpoint and the module operations it exposes.
#[derive(Clone, Copy, Debug)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub operations: &'static [&'static str],
    pub authenticated: bool,
}

const fn route(method: &'static str, path: &'static str, operations: &'static [&'static str]) -> RouteSpec {
    RouteSpec {
        method,
        path,
        operations,
        authenticated: true,
    }
}

pub const ROUTES: &[RouteSpec] = &[
    RouteSpec {
        method: "GET",
        path: "/healthz",
        operations: &["service.health"],
        authenticated: false,
    },
    route("POST", "/v1/usecases", &["repo.create_use_case"]),
    route("GET", "/v1/repo", &["repo.list"]),
    route("POST", "/v1/repo/versions", &["repo.add_version"]),
    route("POST", "/v1/repo/duplicate", &["repo.duplicate"]),
    route("POST", "/v1/repo/enabled", &["repo.set_enabled"]),
    route("PUT", "/v1/repo/files", &["repo.upload"]),
    route("GET", "/v1/repo/files", &["repo.download"]),
    route("POST", "/v1/config/validate", &["repo.validate_config"]),
    route("POST", "/v1/tasks", &["tasks.submit"]),
    route("GET", "/v1/tasks", &["tasks.list"]),
    route("GET", "/v1/tasks/{id}", &["tasks.get", "tasks.progress"]),
    route("POST", "/v1/tasks/{id}/cancel", &["tasks.cancel"]),
    route("POST", "/v1/tasks/{id}/rerun", &["tasks.rerun"]),
    route("GET", "/v1/tasks/{id}/logs", &["tasks.get_logs"]),
    route("GET", "/v1/tasks/{id}/logs/stream", &["tasks.stream_logs"]),
    route("GET", "/v1/tasks/{id}/result", &["tasks.get_result_ref"]),
    route("GET", "/v1/results/{ref}/artifacts/{*name}", &["tasks.read_result_artifact"]),
    route("GET", "/v1/results/{ref}/profile", &["analytics.profile"]),
    route(
        "GET",
        "/v1/results/{ref}/correlations",
        &["analytics.correlations", "analytics.color_for", "analytics.classify_correlation"],
    ),
    route("POST", "/v1/results/{ref}/transform", &["analytics.apply_transforms"]),
    route("GET", "/v1/results/{ref}/recommendations", &["analytics.recommend"]),
    route("GET", "/v1/profiles/{name}", &["analytics.load_profile"]),
    route("POST", "/v1/keys", &["auth.issue_key"]),
    route("POST", "/v1/permissions", &["auth.grant"]),
    route("POST", "/v1/principals", &["auth.register_principal"]),
];

/// Every public operation of the modules the service fronts. The
/// lifecycle-internal `tasks.advance` is deliberately absent.
pub const MODULE_OPERATIONS: &[&str] = &[
    "repo.create_use_case",
    "repo.list",
    "repo.add_version",
    "repo.duplicate",
    "repo.set_enabled",
    "repo.upload",
    "repo.download",
    "repo.validate_config",
    "tasks.submit",
    "tasks.list",
    "tasks.get",
    "tasks.progress",
    "tasks.cancel",
    "tasks.rerun",
    "tasks.get_logs",
    "tasks.stream_logs",
    "tasks.get_result_ref",
    "tasks.read_result_artifact",
    "analytics.profile",
    "analytics.correlations",
    "analytics.color_for",
    "analytics.classify_correlation",
    "analytics.apply_transforms",
    "analytics.recommend",
    "analytics.load_profile",
    "auth.issue_key",
    "auth.grant",
    "auth.register_principal",
    "service.health",
];

type AppState = State<Arc<Fabric>>;
type Caller = Extension<Principal>;

async fn auth_layer(State(fabric): AppState, req: Request, next: Next) -> Response {
    match authenticate_request(&fabric.auth, req).await {
        Ok((mut req, principal)) => {
            req.extensions_mut().insert(principal);
            next.run(req).await
        }
        Err(RequestAuthError::Body(m)) => ApiError::bad_request(m).into_response(),
        Err(RequestAuthError::Auth(e)) => ApiError::from(e).into_response(),
    }
}

pub fn router(fabric: Arc<Fabric>) -> Router {
    let authed = Router::new()
        .route("/v1/usecases", post(create_use_case))
        .route("/v1/repo", get(list_repo))
        .route("/v1/repo/versions", post(add_version))
        .route("/v1/repo/duplicate", post(duplicate))
        .route("/v1/repo/enabled", post(set_enabled))
        .route("/v1/repo/files", get(download).put(upload))
        .route("/v1/config/validate", post(validate))
        .route("/v1/tasks", get(list_tasks).post(submit))
        .route("/v1/tasks/{id}", get(get_task))
        .route("/v1/tasks/{id}/cancel", post(cancel))
        .route("/v1/tasks/{id}/rerun", post(rerun))
        .route("/v1/tasks/{id}/logs", get(logs))
        .route("/v1/tasks/{id}/logs/stream", get(stream_logs))
        .route("/v1/tasks/{id}/result", get(result))
        .route("/v1/results/{ref}/artifacts/{*name}", get(artifact))
        .route("/v1/results/{ref}/profile", get(profile))
        .route("/v1/results/{ref}/correlations", get(correlation_matrix))
        .route("/v1/results/{ref}/transform", post(transform))
        .route("/v1/results/{ref}/recommendations", get(recommendations))
        .route("/v1/profiles/{name}", get(load_profile))
        .route("/v1/keys", post(issue_key))
        .route("/v1/permissions", post(grant_permission))
        .route("/v1/principals", post(register_principal))
        .route_layer(middleware::from_fn_with_state(fabric.clone(), auth_layer));
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .merge(authed)
        .fallback(|| async { ApiError::no_route() })
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(fabric)
}

fn json_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

fn repo_path(text: &str) -> Result<RepoPath, ApiError> {
    RepoPath::parse(text).map_err(|e| fabric_core::repo::RepoError::Malformed(e).into())
}

fn task_id(raw: &str) -> Result<TaskId, ApiError> {
    let id = TaskId::new(raw);
    if id.is_well_formed() {
        Ok(id)
    } else {
        Err(ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("task `{raw}` not found")))
    }
}

fn created<T: Serialize>(value: T) -> Response {
    (StatusCode::CREATED, Json(value)).into_response()
}

#[derive(Deserialize)]
struct PathQuery {
    path: String,
}

#[derive(Deserialize)]
struct CreateUseCase {
    #[serde(default = "shared_root")]
    root: Root,
    name: String,
    #[serde(default)]
    site_ids: Vec<SiteId>,
}

fn shared_root() -> Root {
    Root::Shared
}

async fn create_use_case(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateUseCase = json_body(&body)?;
    Ok(created(f.repo.create_use_case(&p, req.root, &req.name, req.site_ids)?))
}

async fn list_repo(State(f): AppState, Extension(p): Caller, Query(q): Query<PathQuery>) -> Result<Response, ApiError> {
    Ok(Json(f.repo.list(&p, &repo_path(&q.path)?)?).into_response())
}

#[derive(Deserialize)]
struct PathBody {
    path: String,
}

async fn add_version(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: PathBody = json_body(&body)?;
    let created_path = f.repo.add_version(&p, &repo_path(&req.path)?)?;
    Ok(created(json!({ "path": created_path })))
}

#[derive(Deserialize)]
struct DuplicateBody {
    path: String,
    #[serde(default)]
    into: Option<Root>,
}

async fn duplicate(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: DuplicateBody = json_body(&body)?;
    let copy = f.repo.duplicate(&p, &repo_path(&req.path)?, req.into)?;
    Ok(created(json!({ "path": copy })))
}

#[derive(Deserialize)]
struct EnabledBody {
    path: String,
    enabled: bool,
}

async fn set_enabled(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: EnabledBody = json_body(&body)?;
    let path = repo_path(&req.path)?;
    f.repo.set_enabled(&p, &path, req.enabled)?;
    Ok(Json(json!({ "path": path, "enabled": req.enabled })).into_response())
}

#[derive(Deserialize)]
struct UploadQuery {
    path: String,
    /// Reject the write unless the stored file still has this timestamp.
    #[serde(default)]
    expected_modified: Option<DateTime<Utc>>,
}

async fn upload(
    State(f): AppState,
    Extension(p): Caller,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let path = repo_path(&q.path)?;
    let entry = match (q.expected_modified, path.version_dir(), path.file()) {
        (None, Some(version), Some(name)) => f.repo.upload(&p, &version, name.as_str(), &body)?,
        (expected, _, _) => f.repo.write_file(&p, &path, &body, expected)?,
    };
    Ok(Json(entry).into_response())
}

async fn download(State(f): AppState, Extension(p): Caller, Query(q): Query<PathQuery>) -> Result<Response, ApiError> {
    let bytes = f.repo.download(&p, &repo_path(&q.path)?)?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Deserialize)]
struct ValidateQuery {
    /// Version directory whose scripts the configuration may reference.
    #[serde(default)]
    version: Option<String>,
}

async fn validate(
    State(f): AppState,
    Extension(p): Caller,
    Query(q): Query<ValidateQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let config: WorkflowConfig = match q.version {
        Some(v) => {
            let version = repo_path(&v)?;
            let scripts = f
                .repo
                .list(&p, &version)?
                .into_iter()
                .filter(|e| e.kind == EntryKind::File)
                .map(|e| e.path.name())
                .filter(|n| n != WorkflowConfig::FILE_NAME)
                .collect();
            validate_config(&body, &ConfigContext { scripts, sites: f.sites.clone() })?
        }
        None => {
            let config = parse_config(&body)?;
            // Without a version only site references can be checked.
            let scripts = config.steps.iter().map(|s| s.script.clone()).collect();
            validate_references(&config, &ConfigContext { scripts, sites: f.sites.clone() })?;
            config
        }
    };
    Ok(Json(config).into_response())
}

#[derive(Deserialize)]
struct SubmitBody {
    config_path: String,
    #[serde(default)]
    overrides: ParamMap,
}

async fn submit(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: SubmitBody = json_body(&body)?;
    Ok(created(f.tasks.submit(&p, &repo_path(&req.config_path)?, req.overrides)?))
}

async fn list_tasks(State(f): AppState, Extension(p): Caller) -> Response {
    Json(f.tasks.list(&p)).into_response()
}

async fn get_task(State(f): AppState, Extension(p): Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(f.tasks.get(&p, &task_id(&id)?)?).into_response())
}

async fn cancel(State(f): AppState, Extension(p): Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = task_id(&id)?;
    Ok(Json(f.tasks.cancel(&p, &id).await?).into_response())
}

#[derive(Deserialize, Default)]
struct RerunBody {
    #[serde(default)]
    overrides: ParamMap,
}

async fn rerun(State(f): AppState, Extension(p): Caller, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: RerunBody = if body.is_empty() { RerunBody::default() } else { json_body(&body)? };
    Ok(created(f.tasks.rerun(&p, &task_id(&id)?, req.overrides).await?))
}

#[derive(Deserialize)]
struct LogQuery {
    #[serde(default)]
    stream: Option<String>,
}

fn parse_stream(q: &LogQuery) -> Result<Option<LogStream>, ApiError> {
    q.stream
        .as_deref()
        .map(|s| s.parse().map_err(|e: String| ApiError::bad_request(e)))
        .transpose()
}

async fn logs(
    State(f): AppState,
    Extension(p): Caller,
    Path(id): Path<String>,
    Query(q): Query<LogQuery>,
) -> Result<Response, ApiError> {
    Ok(Json(f.tasks.logs(&p, &task_id(&id)?, parse_stream(&q)?)?).into_response())
}

fn closes_stream(e: &LogEntry) -> bool {
    e.checkpoint.is_some_and(TaskState::is_terminal)
}

fn sse_event(e: &LogEntry) -> Event {
    Event::default()
        .event(if e.checkpoint.is_some() { "checkpoint" } else { "log" })
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("log entry serializes"))
}

struct Follow {
    fabric: Arc<Fabric>,
    principal: Principal,
    id: TaskId,
    rx: broadcast::Receiver<LogEntry>,
    next_seq: u64,
    done: bool,
}

impl Follow {
    /// Next live entry of this task, re-reading the log after a lag.
    async fn next(mut self) -> Option<(Vec<LogEntry>, Self)> {
        if self.done {
            return None;
        }
        loop {
            match self.rx.recv().await {
                Ok(e) if e.task_id == self.id && e.seq >= self.next_seq => {
                    self.next_seq = e.seq + 1;
                    self.done = closes_stream(&e);
                    return Some((vec![e], self));
                }
                Ok(_) => continue,
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let missed: Vec<LogEntry> = self
                        .fabric
                        .tasks
                        .logs(&self.principal, &self.id, None)
                        .ok()?
                        .into_iter()
                        .filter(|e| e.seq >= self.next_seq)
                        .collect();
                    if let Some(last) = missed.last() {
                        self.next_seq = last.seq + 1;
                        self.done = missed.iter().any(closes_stream);
                        return Some((missed, self));
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

/// History first, then live entries until the task's terminal checkpoint.
async fn stream_logs(
    State(f): AppState,
    Extension(p): Caller,
    Path(id): Path<String>,
    Query(q): Query<LogQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let id = task_id(&id)?;
    let filter = parse_stream(&q)?;
    // Subscribe before the snapshot so nothing falls between the two.
    let rx = f.tasks.subscribe();
    let history = f.tasks.logs(&p, &id, None)?;
    let follow = Follow {
        fabric: f.clone(),
        principal: p,
        id,
        rx,
        next_seq: history.last().map_or(0, |e| e.seq + 1),
        done: history.iter().any(closes_stream),
    };
    let keep = move |e: &LogEntry| filter.is_none_or(|s| s == e.stream);
    let past = stream::iter(history.into_iter().filter(keep).map(|e| Ok(sse_event(&e))).collect::<Vec<_>>());
    let live = stream::unfold(follow, Follow::next).flat_map(move |batch| {
        stream::iter(
            batch
                .into_iter()
                .filter(keep)
                .map(|e| Ok(sse_event(&e)))
                .collect::<Vec<_>>(),
        )
    });
    Ok(Sse::new(past.chain(live)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

async fn result(State(f): AppState, Extension(p): Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = task_id(&id)?;
    let result_ref = f.tasks.result_ref(&p, &id)?;
    let summary = f.tasks.result_summary(&p, &result_ref)?;
    let artifacts = f.tasks.result_artifacts(&p, &result_ref)?;
    Ok(Json(json!({ "result_ref": result_ref, "summary": summary, "artifacts": artifacts })).into_response())
}

async fn artifact(
    State(f): AppState,
    Extension(p): Caller,
    Path((result_ref, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let bytes = f.tasks.read_result_artifact(&p, &result_ref, &name)?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Deserialize)]
struct TableQuery {
    #[serde(default)]
    artifact: Option<String>,
}

fn load_table(f: &Fabric, p: &Principal, result_ref: &str, artifact: Option<&str>) -> Result<ResultTable, ApiError> {
    Ok(f.tasks.result_table(p, result_ref, artifact)?)
}

async fn profile(
    State(f): AppState,
    Extension(p): Caller,
    Path(result_ref): Path<String>,
    Query(q): Query<TableQuery>,
) -> Result<Response, ApiError> {
    let table = load_table(&f, &p, &result_ref, q.artifact.as_deref())?;
    let report = profile_report(&table)?;
    let flags = flag_variables(&report.variables, &VariableBounds::default());
    Ok(Json(json!({ "report": report, "flags": flags })).into_response())
}

#[derive(Deserialize)]
struct CorrelationQuery {
    #[serde(default)]
    artifact: Option<String>,
    #[serde(default)]
    good: Option<f64>,
    #[serde(default)]
    moderate: Option<f64>,
}

#[derive(Serialize)]
struct CorrelationCell {
    i: usize,
    j: usize,
    a: String,
    b: String,
    r: Option<f64>,
    pairs: usize,
    class: Option<fabric_core::analytics::CorrelationClass>,
    color: Option<String>,
}

async fn correlation_matrix(
    State(f): AppState,
    Extension(p): Caller,
    Path(result_ref): Path<String>,
    Query(q): Query<CorrelationQuery>,
) -> Result<Response, ApiError> {
    let defaults = Thresholds::default();
    let thresholds = Thresholds::new(q.good.unwrap_or(defaults.good), q.moderate.unwrap_or(defaults.moderate))?;
    let table = load_table(&f, &p, &result_ref, q.artifact.as_deref())?;
    let matrix = correlations(&table)?;
    let mut cells = Vec::with_capacity(matrix.entries.len());
    for e in &matrix.entries {
        // Sampling can push |r| a rounding step past 1; clamp before coloring.
        let color = e.r.map(|r| color_for(r.clamp(-1.0, 1.0))).transpose()?.map(|c| c.to_hex());
        cells.push(CorrelationCell {
            i: e.i,
            j: e.j,
            a: matrix.variables[e.i].clone(),
            b: matrix.variables[e.j].clone(),
            r: e.r,
            pairs: e.pairs,
            class: e.r.map(|r| classify_correlation(r, &thresholds)),
            color,
        });
    }
    Ok(Json(json!({
        "variables": matrix.variables,
        "sample_size": matrix.sample_size,
        "thresholds": thresholds,
        "entries": cells,
    }))
    .into_response())
}

#[derive(Deserialize)]
struct TransformBody {
    profile: TransformationProfile,
    #[serde(default)]
    artifact: Option<String>,
    /// Also store the profile under its name for later replay.
    #[serde(default)]
    save: bool,
}

async fn transform(
    State(f): AppState,
    Extension(p): Caller,
    Path(result_ref): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: TransformBody = json_body(&body)?;
    req.profile.thresholds.validate()?;
    let table = load_table(&f, &p, &result_ref, req.artifact.as_deref())?;
    let outcome = apply_transforms(&table, &req.profile)?;
    if req.save {
        let name = Segment::parse(&req.profile.name).map_err(ApiError::bad_request)?;
        let path = f.profiles_dir().join(format!("{}.json", name.as_str()));
        fabric_core::repo::write_atomic(&path, &serde_json::to_vec_pretty(&req.profile).expect("profile serializes"))
            .map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let report = profile_report(&outcome.table)?;
    Ok(Json(json!({
        "manifest": outcome.table.manifest(),
        "csv": String::from_utf8_lossy(&outcome.table.to_csv()),
        "division_by_zero_rows": outcome.division_by_zero_rows,
        "flags": flag_variables(&report.variables, &req.profile.bounds),
    }))
    .into_response())
}

#[derive(Deserialize)]
struct RecommendQuery {
    #[serde(default)]
    artifact: Option<String>,
    /// Comma-separated variable names.
    #[serde(default)]
    select: Option<String>,
}

async fn recommendations(
    State(f): AppState,
    Extension(p): Caller,
    Path(result_ref): Path<String>,
    Query(q): Query<RecommendQuery>,
) -> Result<Response, ApiError> {
    let table = load_table(&f, &p, &result_ref, q.artifact.as_deref())?;
    let report = profile_report(&table)?;
    let selection: Option<Vec<String>> = q
        .select
        .map(|s| s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect());
    if let Some(sel) = &selection {
        let known: BTreeSet<&str> = report.variables.iter().map(|v| v.name.as_str()).collect();
        if let Some(missing) = sel.iter().find(|v| !known.contains(v.as_str())) {
            return Err(fabric_core::analytics::AnalyticsError::UnknownVariable(missing.clone()).into());
        }
    }
    Ok(Json(recommend(&report.variables, selection.as_deref())).into_response())
}

async fn load_profile(State(f): AppState, Path(name): Path<String>) -> Result<Response, ApiError> {
    let name = Segment::parse(&name).map_err(ApiError::bad_request)?;
    let path = f.profiles_dir().join(format!("{}.json", name.as_str()));
    let bytes = std::fs::read(&path)
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("profile `{name}` not found")))?;
    let profile: TransformationProfile = serde_json::from_slice(&bytes).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(profile).into_response())
}

#[derive(Deserialize)]
struct IssueKey {
    user: UserId,
    #[serde(default)]
    ttl_seconds: Option<u64>,
}

async fn issue_key(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: IssueKey = json_body(&body)?;
    let (key_id, secret) = f.auth.issue_key(&p, &req.user, req.ttl_seconds.map(Duration::from_secs))?;
    Ok(created(json!({ "key_id": key_id, "secret": secret.expose(), "user": req.user })))
}

async fn grant_permission(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let permission: Permission = json_body(&body)?;
    f.auth.grant_permission(&p, permission.clone())?;
    Ok(created(permission))
}

#[derive(Deserialize)]
struct PrincipalBody {
    user_id: UserId,
    #[serde(default)]
    roles: BTreeSet<Role>,
    #[serde(default)]
    owned_sites: BTreeSet<SiteId>,
}

async fn register_principal(State(f): AppState, Extension(p): Caller, body: Bytes) -> Result<Response, ApiError> {
    let req: PrincipalBody = json_body(&body)?;
    let principal = Principal::new(req.user_id, req.roles).owning(req.owned_sites);
    f.auth.register_principal(&p, principal.clone())?;
    Ok(created(principal))
}

/// Route paths with their placeholders filled, for coverage checks.
pub fn sample_uri(spec: &RouteSpec) -> String {
    let mut path = spec
        .path
        .replace("{id}", "abc123")
        .replace("{ref}", "abc123")
        .replace("{*name}", "out.csv")
        .replace("{name}", "p1");
    if matches!(spec.path, "/v1/repo" | "/v1/repo/files") {
        path.push_str("?path=/shared");
    }
    path
}

