//! The data-site agent: runs analysis steps next to the data and returns
//! only derived artifacts.

pub mod catalog;
pub mod client;
pub mod config;
pub mod http;
pub mod runner;
pub mod service;

use axum::http::StatusCode;
use thiserror::Error;

use fabric_core::auth::AuthError;
use fabric_core::domain::DatasetId;
use fabric_core::wire::ErrorBody;

pub use catalog::{DatasetCatalog, DatasetRecord};
pub use client::{AgentClient, AgentEndpoint};
pub use config::{AgentConfig, ConfigError};
pub use runner::{NetworkIsolation, PacRunnerSpec};
pub use service::{SiteAgent, SiteTaskState, StepRecord, StepState, TaskStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("authentication failed: {0}")]
    Unauthenticated(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("access to dataset {0} is not granted")]
    DatasetDenied(DatasetId),
    #[error("locator `{0}` escapes the data root")]
    LocatorEscapesRoot(String),
    #[error("script exited with code {exit_code}")]
    ScriptError { exit_code: i32, stderr_tail: String },
    #[error("resource limit exceeded: {limit}")]
    ResourceLimitExceeded { limit: String, stderr_tail: String },
    #[error("terminated")]
    Terminated,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("sandbox unavailable: {0}")]
    Sandbox(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::Unauthenticated(_) => "Unauthenticated",
            AgentError::PermissionDenied(_) => "PermissionDenied",
            AgentError::DatasetDenied(_) => "DatasetDenied",
            AgentError::LocatorEscapesRoot(_) => "LocatorEscapesRoot",
            AgentError::ScriptError { .. } => "ScriptError",
            AgentError::ResourceLimitExceeded { .. } => "ResourceLimitExceeded",
            AgentError::Terminated => "Terminated",
            AgentError::NotFound(_) => "NotFound",
            AgentError::BadRequest(_) => "BadRequest",
            AgentError::Sandbox(_) => "SandboxUnavailable",
            AgentError::Io(_) => "Io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            AgentError::Unauthenticated(_) => StatusCode::UNAUTHORIZED,
            AgentError::PermissionDenied(_) | AgentError::DatasetDenied(_) => StatusCode::FORBIDDEN,
            AgentError::LocatorEscapesRoot(_) | AgentError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AgentError::ScriptError { .. } | AgentError::ResourceLimitExceeded { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            AgentError::Terminated => StatusCode::CONFLICT,
            AgentError::NotFound(_) => StatusCode::NOT_FOUND,
            AgentError::Sandbox(_) | AgentError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn to_body(&self) -> ErrorBody {
        let body = ErrorBody::new(self.code(), self.to_string());
        match self {
            AgentError::ScriptError { exit_code, stderr_tail } => body.with_detail(
                serde_json::json!({ "exit_code": exit_code, "stderr_tail": stderr_tail }),
            ),
            AgentError::ResourceLimitExceeded { limit, stderr_tail } => {
                body.with_detail(serde_json::json!({ "limit": limit, "stderr_tail": stderr_tail }))
            }
            _ => body,
        }
    }
}

impl From<AuthError> for AgentError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::PermissionDenied(m) => AgentError::PermissionDenied(m),
            other => AgentError::Unauthenticated(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AgentError {
    fn from(e: std::io::Error) -> Self {
        AgentError::Io(e.to_string())
    }
}
