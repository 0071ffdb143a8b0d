//! Request signing.
//!
//! A request is reduced to a canonical string (lowercase method, exact path
//! with query, hex SHA-256 of the body, decimal epoch seconds, joined with
//! newlines) and authenticated with HMAC-SHA256. The MAC key is derived from
//! the secret salted with its key id, and only that derived key is ever
//! stored by a verifier.

use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::domain::KeyId;

pub const HEADER_KEY_ID: &str = "x-fabric-key-id";
pub const HEADER_TIMESTAMP: &str = "x-fabric-timestamp";
pub const HEADER_SIGNATURE: &str = "x-fabric-signature";

/// Maximum accepted distance between a request timestamp and the verifier's clock.
pub const MAX_SKEW_SECS: i64 = 300;

type HmacSha256 = Hmac<Sha256>;

/// A high-entropy client secret. Never printed by `Debug`.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn generate() -> Self {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        Self(hex::encode(bytes))
    }

    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into().trim().to_owned())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

/// The salted hash of a secret; this is the MAC key.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey([u8; 32]);

impl SigningKey {
    pub fn derive(key_id: &KeyId, secret: &Secret) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"fabric-key-v1\0");
        hasher.update(key_id.as_str().as_bytes());
        hasher.update(b"\0");
        hasher.update(secret.expose().as_bytes());
        Self(hasher.finalize().into())
    }

    pub fn from_hex(text: &str) -> Option<Self> {
        let bytes = hex::decode(text).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn mac(&self) -> HmacSha256 {
        <HmacSha256 as KeyInit>::new_from_slice(&self.0).expect("HMAC accepts any key length")
    }

    pub fn sign(&self, canonical: &CanonicalRequest) -> String {
        let mut mac = self.mac();
        mac.update(canonical.as_string().as_bytes());
        hex::encode(mac.finalize().into_bytes())
    }

    /// Constant-time check of a hex signature.
    pub fn verify(&self, canonical: &CanonicalRequest, signature_hex: &str) -> bool {
        let Ok(sig) = hex::decode(signature_hex.trim()) else {
            return false;
        };
        let mut mac = self.mac();
        mac.update(canonical.as_string().as_bytes());
        mac.verify_slice(&sig).is_ok()
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(<redacted>)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanonicalRequest {
    pub method: String,
    pub path: String,
    pub body_digest: String,
    pub timestamp: i64,
}

impl CanonicalRequest {
    pub fn new(method: &str, path_and_query: &str, body: &[u8], timestamp: i64) -> Self {
        Self {
            method: method.to_ascii_lowercase(),
            path: path_and_query.to_owned(),
            body_digest: hex::encode(Sha256::digest(body)),
            timestamp,
        }
    }

    pub fn as_string(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}",
            self.method, self.path, self.body_digest, self.timestamp
        )
    }
}

/// Headers to attach to one signed request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedHeaders {
    pub key_id: String,
    pub timestamp: String,
    pub signature: String,
}

impl SignedHeaders {
    pub fn pairs(&self) -> [(&'static str, &str); 3] {
        [
            (HEADER_KEY_ID, self.key_id.as_str()),
            (HEADER_TIMESTAMP, self.timestamp.as_str()),
            (HEADER_SIGNATURE, self.signature.as_str()),
        ]
    }
}

/// Client-side signer holding a key id and its derived MAC key.
#[derive(Clone, Debug)]
pub struct RequestSigner {
    key_id: KeyId,
    key: SigningKey,
}

impl RequestSigner {
    pub fn new(key_id: KeyId, secret: &Secret) -> Self {
        let key = SigningKey::derive(&key_id, secret);
        Self { key_id, key }
    }

    pub fn from_signing_key(key_id: KeyId, key: SigningKey) -> Self {
        Self { key_id, key }
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    pub fn sign(&self, method: &str, path_and_query: &str, body: &[u8], timestamp: i64) -> SignedHeaders {
        let canonical = CanonicalRequest::new(method, path_and_query, body, timestamp);
        SignedHeaders {
            key_id: self.key_id.to_string(),
            timestamp: timestamp.to_string(),
            signature: self.key.sign(&canonical),
        }
    }

    pub fn sign_now(&self, method: &str, path_and_query: &str, body: &[u8]) -> SignedHeaders {
        self.sign(method, path_and_query, body, chrono::Utc::now().timestamp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_string_layout() {
        let c = CanonicalRequest::new("POST", "/v1/tasks?x=1", b"", 1_700_000_000);
        assert_eq!(
            c.as_string(),
            "post\n/v1/tasks?x=1\ne3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855\n1700000000"
        );
    }

    #[test]
    fn sign_and_verify() {
        let id = KeyId::new("fk_test");
        let secret = Secret::new("s3cret");
        let signer = RequestSigner::new(id.clone(), &secret);
        let headers = signer.sign("GET", "/v1/tasks", b"", 42);
        let canonical = CanonicalRequest::new("GET", "/v1/tasks", b"", 42);
        let key = SigningKey::derive(&id, &secret);
        assert!(key.verify(&canonical, &headers.signature));
        let mut flipped = headers.signature.into_bytes();
        flipped[0] = if flipped[0] == b'0' { b'1' } else { b'0' };
        assert!(!key.verify(&canonical, std::str::from_utf8(&flipped).unwrap()));
        assert!(!key.verify(&canonical, "zz"));
    }

    #[test]
    fn secret_is_redacted_in_debug() {
        let s = Secret::new("hunter2");
        assert!(!format!("{s:?}").contains("hunter2"));
    }
}
