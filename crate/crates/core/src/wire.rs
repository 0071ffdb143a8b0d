//! Multipart framing for step bundles and step outputs.
//!
//! A message is a JSON part named `manifest` followed by one binary part per
//! file, named `file-<i>` where `i` indexes the manifest's `files` list.

use std::convert::Infallible;

use bytes::Bytes;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FileSet, StepBundle, StepOutput};

pub const MANIFEST_PART: &str = "manifest";
pub const FORM_DATA: &str = "multipart/form-data";
pub const MIXED: &str = "multipart/mixed";

#[derive(Debug, Error)]
pub enum WireError {
    #[error("content type has no multipart boundary: {0}")]
    NoBoundary(String),
    #[error("malformed multipart body: {0}")]
    Multipart(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Serialize, Deserialize)]
struct FileRef {
    group: String,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    header: H,
    files: Vec<FileRef>,
}

/// JSON error body shared by the middleware and agent HTTP surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl ErrorBody {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        ErrorBody {
            code: code.into(),
            message: message.into(),
            detail: serde_json::Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }
}

pub struct Encoded {
    pub content_type: String,
    pub body: Bytes,
}

fn boundary() -> String {
    format!("fabric-{:032x}", rand::random::<u128>())
}

/// Extracts `boundary=` from any `multipart/*` content type.
pub fn parse_boundary(content_type: &str) -> Result<String, WireError> {
    let mut parts = content_type.split(';');
    let kind = parts.next().unwrap_or_default().trim().to_ascii_lowercase();
    if !kind.starts_with("multipart/") {
        return Err(WireError::NoBoundary(content_type.into()));
    }
    parts
        .filter_map(|p| p.trim().split_once('='))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("boundary"))
        .map(|(_, v)| v.trim().trim_matches('"').to_string())
        .filter(|b| !b.is_empty())
        .ok_or_else(|| WireError::NoBoundary(content_type.into()))
}

fn encode<H: Serialize>(kind: &str, header: &H, groups: &[(&str, &FileSet)]) -> Encoded {
    let boundary = boundary();
    let mut files = Vec::new();
    let mut blobs = Vec::new();
    for (group, set) in groups {
        for (name, bytes) in set.iter() {
            files.push(FileRef {
                group: group.to_string(),
                name: name.clone(),
            });
            blobs.push(bytes.as_slice());
        }
    }
    let manifest = serde_json::to_vec(&Envelope { header, files }).expect("manifest serializes");
    let mut body = Vec::with_capacity(manifest.len() + blobs.iter().map(|b| b.len() + 160).sum::<usize>());
    let mut part = |name: &str, ctype: &str, data: &[u8]| {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Type: {ctype}\r\n\r\n").as_bytes());
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    };
    part(MANIFEST_PART, "application/json", &manifest);
    for (i, blob) in blobs.iter().enumerate() {
        part(&format!("file-{i}"), "application/octet-stream", blob);
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Encoded {
        content_type: format!("{kind}; boundary={boundary}"),
        body: Bytes::from(body),
    }
}

async fn decode<H: DeserializeOwned>(content_type: &str, body: Bytes) -> Result<(H, Vec<(String, String, Vec<u8>)>), WireError> {
    let boundary = parse_boundary(content_type)?;
    let stream = futures::stream::once(async move { Ok::<_, Infallible>(body) });
    let mut multipart = multer::Multipart::new(stream, boundary);
    let mut manifest: Option<Envelope<H>> = None;
    let mut blobs: Vec<Option<Vec<u8>>> = Vec::new();
    let err = |e: multer::Error| WireError::Multipart(e.to_string());
    while let Some(field) = multipart.next_field().await.map_err(err)? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(err)?;
        if name == MANIFEST_PART {
            let env: Envelope<H> = serde_json::from_slice(&data).map_err(|e| WireError::Manifest(e.to_string()))?;
            blobs = vec![None; env.files.len()];
            manifest = Some(env);
        } else if let Some(i) = name.strip_prefix("file-").and_then(|i| i.parse::<usize>().ok()) {
            let slot = blobs
                .get_mut(i)
                .ok_or_else(|| WireError::Manifest(format!("part {name} precedes manifest or exceeds it")))?;
            *slot = Some(data.to_vec());
        } else {
            return Err(WireError::Manifest(format!("unexpected part `{name}`")));
        }
    }
    let env = manifest.ok_or_else(|| WireError::Manifest("missing manifest part".into()))?;
    let mut out = Vec::with_capacity(env.files.len());
    for (i, (file, blob)) in env.files.into_iter().zip(blobs).enumerate() {
        let blob = blob.ok_or_else(|| WireError::Manifest(format!("missing part file-{i}")))?;
        out.push((file.group, file.name, blob));
    }
    Ok((env.header, out))
}

fn regroup(files: Vec<(String, String, Vec<u8>)>, groups: &mut [(&str, &mut FileSet)]) -> Result<(), WireError> {
    for (group, name, bytes) in files {
        let set = groups
            .iter_mut()
            .find(|(g, _)| *g == group)
            .ok_or_else(|| WireError::Manifest(format!("unknown file group `{group}`")))?;
        set.1.insert(name, bytes);
    }
    Ok(())
}

pub fn encode_bundle(bundle: &StepBundle) -> Encoded {
    let header = StepBundle {
        scripts: FileSet::new(),
        inputs: FileSet::new(),
        ..bundle.clone()
    };
    encode(FORM_DATA, &header, &[("scripts", &bundle.scripts), ("inputs", &bundle.inputs)])
}

pub async fn decode_bundle(content_type: &str, body: Bytes) -> Result<StepBundle, WireError> {
    let (mut bundle, files): (StepBundle, _) = decode(content_type, body).await?;
    let (mut scripts, mut inputs) = (FileSet::new(), FileSet::new());
    regroup(files, &mut [("scripts", &mut scripts), ("inputs", &mut inputs)])?;
    bundle.scripts = scripts;
    bundle.inputs = inputs;
    Ok(bundle)
}

pub fn encode_output(output: &StepOutput) -> Encoded {
    let header = StepOutput {
        artifacts: FileSet::new(),
        ..output.clone()
    };
    encode(MIXED, &header, &[("artifacts", &output.artifacts)])
}

pub async fn decode_output(content_type: &str, body: Bytes) -> Result<StepOutput, WireError> {
    let (mut output, files): (StepOutput, _) = decode(content_type, body).await?;
    let mut artifacts = FileSet::new();
    regroup(files, &mut [("artifacts", &mut artifacts)])?;
    output.artifacts = artifacts;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Command, SiteId, TaskId, UserId};
    use proptest::prelude::*;

    fn bundle(scripts: FileSet, inputs: FileSet) -> StepBundle {
        StepBundle {
            task_id: TaskId::new("abc"),
            user: UserId::new("ana"),
            iteration: 3,
            site_id: SiteId::new("siteA"),
            step_index: 1,
            script_name: "refine.py".into(),
            scripts,
            params: Default::default(),
            command: Command::Fit,
            inputs,
            dataset_ids: vec!["shard".into()],
            keep_local_copy: true,
            timestamp_results: false,
        }
    }

    #[tokio::test]
    async fn output_round_trip_with_binary_payload() {
        let out = StepOutput {
            task_id: TaskId::new("abc"),
            iteration: 2,
            site_id: SiteId::new("siteC"),
            step_index: 5,
            artifacts: FileSet::from([
                ("model.json".into(), b"{\"w\":[1]}".to_vec()),
                ("blob".into(), b"--\r\n--fabric-\0\xff".to_vec()),
            ]),
            metrics: [("loss".to_string(), 0.25)].into(),
            local_copy_kept: false,
        };
        let enc = encode_output(&out);
        assert!(enc.content_type.starts_with("multipart/mixed; boundary="));
        assert_eq!(decode_output(&enc.content_type, enc.body).await.unwrap(), out);
    }

    #[tokio::test]
    async fn missing_parts_are_rejected() {
        let enc = encode_bundle(&bundle(FileSet::from([("a.py".into(), b"x".to_vec())]), FileSet::new()));
        let text = String::from_utf8(enc.body.to_vec()).unwrap();
        let cut = text.find("--fabric-").unwrap();
        let second = text[cut + 2..].find("--fabric-").unwrap() + cut + 2;
        let boundary = parse_boundary(&enc.content_type).unwrap();
        let truncated = format!("{}--{boundary}--\r\n", &text[..second]);
        assert!(decode_bundle(&enc.content_type, Bytes::from(truncated)).await.is_err());
        assert!(decode_bundle("application/json", enc.body).await.is_err());
    }

    #[test]
    fn boundary_parsing() {
        assert_eq!(parse_boundary("multipart/mixed; boundary=\"xyz\"").unwrap(), "xyz");
        assert_eq!(parse_boundary("Multipart/Form-Data;charset=utf-8; Boundary=q").unwrap(), "q");
        assert!(parse_boundary("text/plain; boundary=x").is_err());
        assert!(parse_boundary("multipart/mixed").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn bundle_round_trip(
            scripts in proptest::collection::btree_map("[a-z]{1,8}\\.py", proptest::collection::vec(any::<u8>(), 0..256), 0..4),
            inputs in proptest::collection::btree_map("[a-z]{1,6}/[a-z_.]{1,10}", proptest::collection::vec(any::<u8>(), 0..256), 0..4),
        ) {
            let b = bundle(scripts, inputs);
            let enc = encode_bundle(&b);
            let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
            let decoded = rt.block_on(decode_bundle(&enc.content_type, enc.body)).unwrap();
            prop_assert_eq!(decoded, b);
        }
    }
}
