//! Module errors translated to HTTP statuses and stable error codes.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use fabric_core::analytics::AnalyticsError;
use fabric_core::auth::AuthError;
use fabric_core::repo::{ConfigError, RepoError};
use fabric_core::tasks::TaskError;
use fabric_core::wire::ErrorBody;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody::new(code, message),
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn no_route() -> Self {
        Self::new(StatusCode::NOT_FOUND, "NoRoute", "no such route")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

const UNAUTHORIZED: StatusCode = StatusCode::UNAUTHORIZED;
const FORBIDDEN: StatusCode = StatusCode::FORBIDDEN;
const NOT_FOUND: StatusCode = StatusCode::NOT_FOUND;
const CONFLICT: StatusCode = StatusCode::CONFLICT;
const INVALID: StatusCode = StatusCode::UNPROCESSABLE_ENTITY;
const INTERNAL: StatusCode = StatusCode::INTERNAL_SERVER_ERROR;

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let (status, code) = match &e {
            AuthError::InvalidSignature => (UNAUTHORIZED, "InvalidSignature"),
            AuthError::KeyRevoked(_) => (UNAUTHORIZED, "KeyRevoked"),
            AuthError::KeyExpired(_) => (UNAUTHORIZED, "KeyExpired"),
            AuthError::StaleTimestamp => (UNAUTHORIZED, "StaleTimestamp"),
            AuthError::PermissionDenied(_) => (FORBIDDEN, "PermissionDenied"),
            AuthError::InvalidTtl => (INVALID, "InvalidTtl"),
            AuthError::UnknownPrincipal(_) => (NOT_FOUND, "UnknownPrincipal"),
            AuthError::UnknownKey(_) => (NOT_FOUND, "UnknownKey"),
            AuthError::Io(_) => (INTERNAL, "Io"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::ParseError(_) => "ParseError",
            ConfigError::MissingField(_) => "MissingField",
            ConfigError::UnknownKey(_) => "UnknownKey",
            ConfigError::UnknownScript(_) => "UnknownScript",
            ConfigError::UnknownSite(_) => "UnknownSite",
            ConfigError::InvalidValue { .. } => "InvalidValue",
        };
        let key = e.offending_key().map(str::to_owned);
        ApiError::new(INVALID, code, e.to_string()).with_detail(json!({ "key": key }))
    }
}

impl From<RepoError> for ApiError {
    fn from(e: RepoError) -> Self {
        let (status, code) = match &e {
            RepoError::PermissionDenied(_) => (FORBIDDEN, "PermissionDenied"),
            RepoError::DuplicateName(_) => (CONFLICT, "DuplicateName"),
            RepoError::NotAWorkflow(_) => (INVALID, "NotAWorkflow"),
            RepoError::CloneForbidden(_) => (CONFLICT, "CloneForbidden"),
            RepoError::NotAVersionDirectory(_) => (INVALID, "NotAVersionDirectory"),
            RepoError::NotFound(_) => (NOT_FOUND, "NotFound"),
            RepoError::InvalidName(_) => (INVALID, "InvalidName"),
            RepoError::Malformed(_) => (INVALID, "MalformedPath"),
            RepoError::StaleWrite(_) => (CONFLICT, "StaleWrite"),
            RepoError::Config(c) => return c.clone().into(),
            RepoError::Io(_) => (INTERNAL, "Io"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        let code = match &e {
            AnalyticsError::EmptyTable => "EmptyTable",
            AnalyticsError::NotEnoughNumericColumns(_) => "NotEnoughNumericColumns",
            AnalyticsError::OutOfRange(_) => "OutOfRange",
            AnalyticsError::UnknownVariable(_) => "UnknownVariable",
            AnalyticsError::NotNumeric(_) => "NotNumeric",
            AnalyticsError::ZeroVariance(_) => "ZeroVariance",
            AnalyticsError::FormulaParse { .. } => "FormulaParseError",
            AnalyticsError::InvalidThresholds { .. } => "InvalidThresholds",
            AnalyticsError::DuplicateColumn(_) => "DuplicateColumn",
            AnalyticsError::RaggedColumn(_) => "RaggedColumn",
            AnalyticsError::Csv(_) => "Csv",
            AnalyticsError::ManifestMismatch(_) => "ManifestMismatch",
        };
        let err = ApiError::new(INVALID, code, e.to_string());
        match e {
            AnalyticsError::FormulaParse { position, .. } => err.with_detail(json!({ "position": position })),
            _ => err,
        }
    }
}

impl From<TaskError> for ApiError {
    fn from(e: TaskError) -> Self {
        let (status, code) = match &e {
            TaskError::PermissionDenied(_) => (FORBIDDEN, "PermissionDenied"),
            TaskError::InvalidConfig(_) => (INVALID, "InvalidConfig"),
            TaskError::NotFound(_) => (NOT_FOUND, "NotFound"),
            TaskError::NotComplete(_) => (CONFLICT, "NotComplete"),
            TaskError::AlreadyTerminal(_) => (CONFLICT, "AlreadyTerminal"),
            TaskError::IllegalTransition { .. } => (CONFLICT, "IllegalTransition"),
            TaskError::Repo(r) => return r.clone().into(),
            TaskError::ArtifactNotFound(_) => (NOT_FOUND, "ArtifactNotFound"),
            TaskError::Analytics(a) => return a.clone().into(),
            TaskError::Io(_) => (INTERNAL, "Io"),
        };
        ApiError::new(status, code, e.to_string())
    }
}
