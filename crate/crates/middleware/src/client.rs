//! Typed client for the `/v1` API, shared by the CLI and tests.

use std::time::Duration;

use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use fabric_agent::client::{RawResponse, SignedHttp};
use fabric_core::auth::{RequestSigner, Secret};
use fabric_core::domain::{KeyId, LogEntry, ParamMap, Task};
use fabric_core::wire::ErrorBody;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("{} ({status}): {}", body.code, body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.code),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

/// Percent-encodes a query value.
pub fn encode(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for b in value.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~' | b'/') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[derive(Clone)]
pub struct ApiClient {
    http: SignedHttp,
}

fn check(resp: RawResponse) -> Result<RawResponse, ClientError> {
    if resp.is_success() {
        Ok(resp)
    } else {
        Err(ClientError::Api {
            status: resp.status,
            body: resp.error_body(),
        })
    }
}

fn decode<T: DeserializeOwned>(resp: RawResponse) -> Result<T, ClientError> {
    let resp = check(resp)?;
    serde_json::from_slice(&resp.body).map_err(|e| ClientError::Decode(e.to_string()))
}

impl ApiClient {
    pub fn new(endpoint: &str, key_id: KeyId, secret: &Secret) -> Self {
        ApiClient {
            http: SignedHttp::new(endpoint, RequestSigner::new(key_id, secret), Duration::from_secs(120)),
        }
    }

    pub async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        decode(self.http.send(Method::GET, path, Vec::new(), None).await?)
    }

    pub async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        decode(self.http.json(Method::POST, path, Some(body)).await?)
    }

    /// Raw access, for status-code checks.
    pub async fn raw(&self, method: Method, path: &str, body: Vec<u8>) -> Result<RawResponse, ClientError> {
        let ct = (!body.is_empty()).then_some("application/json");
        Ok(self.http.send(method, path, body, ct).await?)
    }

    pub async fn health(&self) -> Result<bool, ClientError> {
        let resp = reqwest::get(format!("{}/healthz", self.http.base())).await?;
        Ok(resp.status().is_success())
    }

    pub async fn create_use_case(&self, root: &str, name: &str, site_ids: &[String]) -> Result<Value, ClientError> {
        self.post("/v1/usecases", &json!({ "root": root, "name": name, "site_ids": site_ids }))
            .await
    }

    pub async fn list(&self, path: &str) -> Result<Value, ClientError> {
        self.get(&format!("/v1/repo?path={}", encode(path))).await
    }

    pub async fn add_version(&self, workflow: &str) -> Result<Value, ClientError> {
        self.post("/v1/repo/versions", &json!({ "path": workflow })).await
    }

    pub async fn duplicate(&self, path: &str, into: Option<&str>) -> Result<Value, ClientError> {
        self.post("/v1/repo/duplicate", &json!({ "path": path, "into": into })).await
    }

    pub async fn set_enabled(&self, version: &str, enabled: bool) -> Result<Value, ClientError> {
        self.post("/v1/repo/enabled", &json!({ "path": version, "enabled": enabled }))
            .await
    }

    pub async fn put_file(&self, path: &str, bytes: Vec<u8>) -> Result<Value, ClientError> {
        let resp = self
            .http
            .send(
                Method::PUT,
                &format!("/v1/repo/files?path={}", encode(path)),
                bytes,
                Some("application/octet-stream"),
            )
            .await?;
        decode(resp)
    }

    pub async fn get_file(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let resp = self
            .http
            .send(Method::GET, &format!("/v1/repo/files?path={}", encode(path)), Vec::new(), None)
            .await?;
        Ok(check(resp)?.body.to_vec())
    }

    pub async fn validate_config(&self, text: Vec<u8>, version: Option<&str>) -> Result<Value, ClientError> {
        let path = match version {
            Some(v) => format!("/v1/config/validate?version={}", encode(v)),
            None => "/v1/config/validate".to_string(),
        };
        decode(self.http.send(Method::POST, &path, text, Some("application/yaml")).await?)
    }

    pub async fn submit(&self, config_path: &str, overrides: &ParamMap) -> Result<Task, ClientError> {
        self.post("/v1/tasks", &json!({ "config_path": config_path, "overrides": overrides }))
            .await
    }

    pub async fn tasks(&self) -> Result<Vec<Task>, ClientError> {
        self.get("/v1/tasks").await
    }

    pub async fn task(&self, id: &str) -> Result<Task, ClientError> {
        self.get(&format!("/v1/tasks/{}", encode(id))).await
    }

    pub async fn cancel(&self, id: &str) -> Result<Task, ClientError> {
        self.post(&format!("/v1/tasks/{}/cancel", encode(id)), &json!({})).await
    }

    pub async fn rerun(&self, id: &str, overrides: &ParamMap) -> Result<Task, ClientError> {
        self.post(&format!("/v1/tasks/{}/rerun", encode(id)), &json!({ "overrides": overrides }))
            .await
    }

    pub async fn logs(&self, id: &str, stream: Option<&str>) -> Result<Vec<LogEntry>, ClientError> {
        let mut path = format!("/v1/tasks/{}/logs", encode(id));
        if let Some(s) = stream {
            path.push_str(&format!("?stream={}", encode(s)));
        }
        self.get(&path).await
    }

    /// Follows the server-sent log stream, calling `on_entry` per entry,
    /// until the server closes it after the terminal checkpoint.
    pub async fn follow_logs(
        &self,
        id: &str,
        stream: Option<&str>,
        mut on_entry: impl FnMut(&str, LogEntry),
    ) -> Result<(), ClientError> {
        let mut path = format!("/v1/tasks/{}/logs/stream", encode(id));
        if let Some(s) = stream {
            path.push_str(&format!("?stream={}", encode(s)));
        }
        let mut resp = self
            .http
            .send_streaming(Method::GET, &path, Vec::new(), None, Some(Duration::from_secs(24 * 3600)))
            .await?;
        if !resp.status().is_success() {
            let status = resp.status().as_u16();
            let body = resp.bytes().await?;
            return Err(ClientError::Api {
                status,
                body: RawResponse {
                    status,
                    content_type: String::new(),
                    body,
                }
                .error_body(),
            });
        }
        let mut parser = SseParser::default();
        while let Some(chunk) = resp.chunk().await? {
            for (event, data) in parser.feed(&chunk) {
                let entry: LogEntry = serde_json::from_str(&data).map_err(|e| ClientError::Decode(e.to_string()))?;
                on_entry(&event, entry);
            }
        }
        Ok(())
    }

    pub async fn result(&self, id: &str) -> Result<Value, ClientError> {
        self.get(&format!("/v1/tasks/{}/result", encode(id))).await
    }

    pub async fn artifact(&self, result_ref: &str, name: &str) -> Result<Vec<u8>, ClientError> {
        let path = format!("/v1/results/{}/artifacts/{}", encode(result_ref), encode(name));
        Ok(check(self.http.send(Method::GET, &path, Vec::new(), None).await?)?
            .body
            .to_vec())
    }

    fn table_path(result_ref: &str, what: &str, artifact: Option<&str>, extra: &[(&str, String)]) -> String {
        let mut params: Vec<String> = artifact.map(|a| format!("artifact={}", encode(a))).into_iter().collect();
        params.extend(extra.iter().map(|(k, v)| format!("{k}={}", encode(v))));
        let mut path = format!("/v1/results/{}/{what}", encode(result_ref));
        if !params.is_empty() {
            path.push('?');
            path.push_str(&params.join("&"));
        }
        path
    }

    pub async fn profile(&self, result_ref: &str, artifact: Option<&str>) -> Result<Value, ClientError> {
        self.get(&Self::table_path(result_ref, "profile", artifact, &[])).await
    }

    pub async fn correlations(
        &self,
        result_ref: &str,
        artifact: Option<&str>,
        thresholds: Option<(f64, f64)>,
    ) -> Result<Value, ClientError> {
        let extra: Vec<(&str, String)> = thresholds
            .map(|(g, m)| vec![("good", g.to_string()), ("moderate", m.to_string())])
            .unwrap_or_default();
        self.get(&Self::table_path(result_ref, "correlations", artifact, &extra))
            .await
    }

    pub async fn recommendations(
        &self,
        result_ref: &str,
        artifact: Option<&str>,
        select: &[String],
    ) -> Result<Value, ClientError> {
        let extra: Vec<(&str, String)> = if select.is_empty() {
            Vec::new()
        } else {
            vec![("select", select.join(","))]
        };
        self.get(&Self::table_path(result_ref, "recommendations", artifact, &extra))
            .await
    }

    pub async fn transform(&self, result_ref: &str, body: &Value) -> Result<Value, ClientError> {
        self.post(&format!("/v1/results/{}/transform", encode(result_ref)), body)
            .await
    }

    pub async fn saved_profile(&self, name: &str) -> Result<Value, ClientError> {
        self.get(&format!("/v1/profiles/{}", encode(name))).await
    }

    pub async fn issue_key(&self, user: &str, ttl_seconds: Option<u64>) -> Result<Value, ClientError> {
        self.post("/v1/keys", &json!({ "user": user, "ttl_seconds": ttl_seconds }))
            .await
    }

    pub async fn grant(&self, permission: &Value) -> Result<Value, ClientError> {
        self.post("/v1/permissions", permission).await
    }

    pub async fn register_principal(&self, user: &str, roles: &[String], owned_sites: &[String]) -> Result<Value, ClientError> {
        self.post(
            "/v1/principals",
            &json!({ "user_id": user, "roles": roles, "owned_sites": owned_sites }),
        )
        .await
    }
}

/// Incremental parser for `event:`/`data:` frames separated by blank lines.
#[derive(Default)]
pub struct SseParser {
    buffer: String,
}

impl SseParser {
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<(String, String)> {
        self.buffer.push_str(&String::from_utf8_lossy(chunk));
        let mut out = Vec::new();
        while let Some(end) = self.buffer.find("\n\n") {
            let frame: String = self.buffer.drain(..end + 2).collect();
            let mut event = "message".to_string();
            let mut data: Vec<&str> = Vec::new();
            for line in frame.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push(v.strip_prefix(' ').unwrap_or(v));
                }
            }
            if !data.is_empty() {
                out.push((event, data.join("\n")));
            }
        }
        out
    }
}
