//! Signed HTTP client for site agents; the orchestrator's transport.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use bytes::Bytes;
use parking_lot::RwLock;
use reqwest::Method;

use fabric_core::auth::RequestSigner;
use fabric_core::domain::{SiteId, StepBundle, StepOutput, TaskId};
use fabric_core::orchestrator::{SiteClient, SiteError};
use fabric_core::wire::{decode_output, encode_bundle, ErrorBody};

use crate::service::TaskStatus;

#[derive(Clone, Debug)]
pub struct RawResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Bytes,
}

impl RawResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// The structured error body, or a synthetic one for opaque failures.
    pub fn error_body(&self) -> ErrorBody {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| {
            ErrorBody::new(
                format!("Http{}", self.status),
                String::from_utf8_lossy(&self.body).into_owned(),
            )
        })
    }
}

/// One base URL plus the key used to sign requests to it.
#[derive(Clone)]
pub struct SignedHttp {
    http: reqwest::Client,
    base: String,
    signer: RequestSigner,
}

impl SignedHttp {
    pub fn new(base: impl Into<String>, signer: RequestSigner, timeout: Duration) -> Self {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        SignedHttp {
            http,
            base: base.into().trim_end_matches('/').to_string(),
            signer,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Sends a signed request and returns the response before its body is
    /// read, for streaming consumers.
    pub async fn send_streaming(
        &self,
        method: Method,
        path_and_query: &str,
        body: Vec<u8>,
        content_type: Option<&str>,
        timeout: Option<Duration>,
    ) -> Result<reqwest::Response, reqwest::Error> {
        let signed = self.signer.sign_now(method.as_str(), path_and_query, &body);
        let mut req = self
            .http
            .request(method, format!("{}{}", self.base, path_and_query));
        for (name, value) in signed.pairs() {
            req = req.header(name, value);
        }
        if let Some(ct) = content_type {
            req = req.header(reqwest::header::CONTENT_TYPE, ct);
        }
        if let Some(t) = timeout {
            req = req.timeout(t);
        }
        req.body(body).send().await
    }

    /// Sends a request signed over method, path with query, body and time.
    pub async fn send(
        &self,
        method: Method,
        path_and_query: &str,
        body: Vec<u8>,
        content_type: Option<&str>,
    ) -> Result<RawResponse, reqwest::Error> {
        let resp = self
            .send_streaming(method, path_and_query, body, content_type, None)
            .await?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        let body = resp.bytes().await?;
        Ok(RawResponse { status, content_type, body })
    }

    pub async fn json<T: serde::Serialize>(
        &self,
        method: Method,
        path_and_query: &str,
        body: Option<&T>,
    ) -> Result<RawResponse, reqwest::Error> {
        match body {
            Some(b) => {
                let bytes = serde_json::to_vec(b).expect("request serializes");
                self.send(method, path_and_query, bytes, Some("application/json")).await
            }
            None => self.send(method, path_and_query, Vec::new(), None).await,
        }
    }
}

#[derive(Clone)]
pub struct AgentEndpoint {
    pub site_id: SiteId,
    pub http: SignedHttp,
}

/// Routes bundles to registered site agents.
#[derive(Default)]
pub struct AgentClient {
    endpoints: RwLock<BTreeMap<SiteId, AgentEndpoint>>,
}

/// Failed steps, as opposed to refused requests.
const STEP_FAILURE_CODES: [&str; 3] = ["ScriptError", "ResourceLimitExceeded", "Terminated"];

impl AgentClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, site_id: SiteId, base_url: &str, signer: RequestSigner, timeout: Duration) {
        let http = SignedHttp::new(base_url, signer, timeout);
        self.endpoints
            .write()
            .insert(site_id.clone(), AgentEndpoint { site_id, http });
    }

    pub fn endpoint(&self, site: &SiteId) -> Result<AgentEndpoint, SiteError> {
        self.endpoints
            .read()
            .get(site)
            .cloned()
            .ok_or_else(|| SiteError::Unreachable {
                site: site.clone(),
                detail: "no endpoint registered".into(),
            })
    }

    pub fn sites(&self) -> Vec<SiteId> {
        self.endpoints.read().keys().cloned().collect()
    }

    pub async fn status(&self, site: &SiteId, task: &TaskId) -> Result<TaskStatus, SiteError> {
        let ep = self.endpoint(site)?;
        let resp = ep
            .http
            .send(Method::GET, &format!("/v1/tasks/{task}/status"), Vec::new(), None)
            .await
            .map_err(|e| unreachable(site, e))?;
        if !resp.is_success() {
            return Err(rejected(site, resp.error_body()));
        }
        serde_json::from_slice(&resp.body).map_err(|e| SiteError::Rejected {
            site: site.clone(),
            code: "BadResponse".into(),
            message: e.to_string(),
        })
    }
}

fn unreachable(site: &SiteId, e: reqwest::Error) -> SiteError {
    SiteError::Unreachable {
        site: site.clone(),
        detail: e.to_string(),
    }
}

fn rejected(site: &SiteId, body: ErrorBody) -> SiteError {
    SiteError::Rejected {
        site: site.clone(),
        code: body.code,
        message: body.message,
    }
}

#[async_trait]
impl SiteClient for AgentClient {
    async fn run_step(&self, bundle: StepBundle) -> Result<StepOutput, SiteError> {
        let site = bundle.site_id.clone();
        let ep = self.endpoint(&site)?;
        let encoded = encode_bundle(&bundle);
        let resp = ep
            .http
            .send(Method::POST, "/v1/steps", encoded.body.to_vec(), Some(&encoded.content_type))
            .await
            .map_err(|e| unreachable(&site, e))?;
        if resp.is_success() {
            return decode_output(&resp.content_type, resp.body)
                .await
                .map_err(|e| SiteError::Rejected {
                    site,
                    code: "BadResponse".into(),
                    message: e.to_string(),
                });
        }
        let body = resp.error_body();
        if STEP_FAILURE_CODES.contains(&body.code.as_str()) {
            let tail = body
                .detail
                .get("stderr_tail")
                .and_then(|v| v.as_str())
                .filter(|t| !t.trim().is_empty());
            let message = match tail {
                Some(t) => format!("{}: {}; stderr: {}", body.code, body.message, t.trim()),
                None => format!("{}: {}", body.code, body.message),
            };
            return Err(SiteError::StepFailed {
                site,
                step: bundle.script_name,
                message,
            });
        }
        Err(rejected(&site, body))
    }

    async fn terminate(&self, site: &SiteId, task: &TaskId) -> Result<(), SiteError> {
        let ep = self.endpoint(site)?;
        let resp = ep
            .http
            .send(Method::POST, &format!("/v1/tasks/{task}/terminate"), Vec::new(), None)
            .await
            .map_err(|e| unreachable(site, e))?;
        // A site that never saw the task holds nothing to release.
        if resp.is_success() || resp.status == 404 {
            Ok(())
        } else {
            Err(rejected(site, resp.error_body()))
        }
    }
}
