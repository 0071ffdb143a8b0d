//! HTTP surface of the site agent.

use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

use fabric_core::auth::{AuthError, AuthService};
use fabric_core::domain::{DatasetId, Principal, TaskId, UserId};
use fabric_core::wire::{decode_bundle, encode_output};

use crate::service::SiteAgent;
use crate::AgentError;

/// Largest request body accepted, bundles included.
pub const MAX_BODY: usize = 512 << 20;

impl IntoResponse for AgentError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.to_body())).into_response()
    }
}

/// Why a request could not be authenticated.
#[derive(Debug)]
pub enum RequestAuthError {
    Body(String),
    Auth(AuthError),
}

/// Verifies the signature headers over the buffered body and hands back
/// the rebuilt request together with the authenticated principal.
pub async fn authenticate_request(
    auth: &AuthService,
    req: Request,
) -> Result<(Request, Principal), RequestAuthError> {
    let (parts, body) = req.into_parts();
    let bytes = to_bytes(body, MAX_BODY)
        .await
        .map_err(|e| RequestAuthError::Body(format!("request body: {e}")))?;
    let path = parts
        .uri
        .path_and_query()
        .map(|p| p.as_str())
        .unwrap_or_else(|| parts.uri.path());
    let principal = auth
        .authenticate_headers(parts.method.as_str(), path, &bytes, |name| {
            parts.headers.get(name).and_then(|v| v.to_str().ok())
        })
        .map_err(RequestAuthError::Auth)?;
    Ok((Request::from_parts(parts, Body::from(bytes)), principal))
}

async fn auth_layer(State(agent): State<Arc<SiteAgent>>, req: Request, next: Next) -> Response {
    match authenticate_request(agent.auth(), req).await {
        Ok((mut req, principal)) => {
            req.extensions_mut().insert(principal);
            next.run(req).await
        }
        Err(RequestAuthError::Body(m)) => AgentError::BadRequest(m).into_response(),
        Err(RequestAuthError::Auth(e)) => AgentError::Unauthenticated(e.to_string()).into_response(),
    }
}

pub fn router(agent: Arc<SiteAgent>) -> Router {
    let authed = Router::new()
        .route("/v1/steps", post(post_step))
        .route("/v1/tasks/{id}/status", get(task_status))
        .route("/v1/tasks/{id}/terminate", post(terminate))
        .route("/v1/datasets", get(list_datasets).post(register_dataset))
        .route("/v1/datasets/{id}/grants", post(grant_dataset))
        .route_layer(middleware::from_fn_with_state(agent.clone(), auth_layer));
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .merge(authed)
        .fallback(|| async { AgentError::NotFound("no such route".into()) })
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(agent)
}

/// Serves `agent` on `listener` until `shutdown` fires.
pub async fn serve(agent: Arc<SiteAgent>, listener: TcpListener, shutdown: CancellationToken) -> std::io::Result<()> {
    axum::serve(listener, router(agent))
        .with_graceful_shutdown(async move { shutdown.cancelled().await })
        .await
}

fn task_id(raw: &str) -> Result<TaskId, AgentError> {
    let id = TaskId::new(raw);
    if id.is_well_formed() {
        Ok(id)
    } else {
        Err(AgentError::BadRequest(format!("malformed task id `{raw}`")))
    }
}

async fn post_step(
    State(agent): State<Arc<SiteAgent>>,
    Extension(principal): Extension<Principal>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, AgentError> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    let bundle = decode_bundle(content_type, body)
        .await
        .map_err(|e| AgentError::BadRequest(e.to_string()))?;
    let output = agent.run_step(&principal, bundle).await?;
    let encoded = encode_output(&output);
    Ok((
        StatusCode::OK,
        [(header::CONTENT_TYPE, encoded.content_type)],
        encoded.body,
    )
        .into_response())
}

async fn task_status(
    State(agent): State<Arc<SiteAgent>>,
    Extension(principal): Extension<Principal>,
    Path(id): Path<String>,
) -> Result<Response, AgentError> {
    Ok(Json(agent.status(&principal, &task_id(&id)?)?).into_response())
}

async fn terminate(
    State(agent): State<Arc<SiteAgent>>,
    Extension(principal): Extension<Principal>,
    Path(id): Path<String>,
) -> Result<Response, AgentError> {
    Ok(Json(agent.terminate(&principal, &task_id(&id)?).await?).into_response())
}

async fn list_datasets(State(agent): State<Arc<SiteAgent>>) -> Response {
    Json(agent.datasets()).into_response()
}

#[derive(Deserialize)]
struct RegisterDataset {
    dataset_id: DatasetId,
    locator: String,
}

fn json_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, AgentError> {
    serde_json::from_slice(body).map_err(|e| AgentError::BadRequest(e.to_string()))
}

async fn register_dataset(
    State(agent): State<Arc<SiteAgent>>,
    Extension(principal): Extension<Principal>,
    body: Bytes,
) -> Result<Response, AgentError> {
    let req: RegisterDataset = json_body(&body)?;
    let record = agent.register_dataset(&principal, req.dataset_id, &req.locator)?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

#[derive(Deserialize)]
struct GrantDataset {
    user: UserId,
}

async fn grant_dataset(
    State(agent): State<Arc<SiteAgent>>,
    Extension(principal): Extension<Principal>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, AgentError> {
    let req: GrantDataset = json_body(&body)?;
    Ok(Json(agent.grant_dataset(&principal, &DatasetId::new(id), req.user)?).into_response())
}
