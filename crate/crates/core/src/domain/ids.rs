use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

/// A 128-bit random value rendered as 32 lowercase hex characters.
fn fresh_hex_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Unique, immutable key of a use case.
    UseCaseKey
);
string_id!(
    /// Identifier of one workflow execution.
    TaskId
);
string_id!(UserId);
string_id!(SiteId);
string_id!(DatasetId);
string_id!(KeyId);

impl UseCaseKey {
    pub fn generate() -> Self {
        Self(fresh_hex_id())
    }
}

impl TaskId {
    pub fn generate() -> Self {
        Self(fresh_hex_id())
    }

    /// Task ids are lowercase hex; anything else is rejected before it is
    /// used to build a filesystem path.
    pub fn is_well_formed(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 64
            && self
                .0
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }
}

impl KeyId {
    pub fn generate() -> Self {
        Self(format!("fk_{}", fresh_hex_id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generated_ids_are_lowercase_hex_and_distinct() {
        let ids: HashSet<_> = (0..1000).map(|_| TaskId::generate()).collect();
        assert_eq!(ids.len(), 1000);
        for id in &ids {
            assert_eq!(id.as_str().len(), 32);
            assert!(id.is_well_formed());
        }
    }

    #[test]
    fn malformed_task_ids_are_detected() {
        assert!(!TaskId::new("../etc").is_well_formed());
        assert!(!TaskId::new("").is_well_formed());
        assert!(!TaskId::new("ABCDEF").is_well_formed());
    }
}
