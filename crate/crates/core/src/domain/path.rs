//! Hierarchical repository paths.
//!
//! Every asset lives at `/<root>/<use-case>/<workflow>/<version>/<file>`, with
//! segments present in strict prefix order. The root is either the shared
//! tree or the requesting principal's own tree, rendered as `shared` and
//! `user` respectively.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed path `{path}`: {reason}")]
pub struct MalformedPath {
    pub path: String,
    pub reason: String,
}

impl MalformedPath {
    fn new(path: &str, reason: impl Into<String>) -> Self {
        Self {
            path: path.to_owned(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Root {
    Shared,
    /// The caller's own tree. Which user it belongs to is decided by whoever
    /// resolves the path, never by the path text.
    User,
}

impl Root {
    pub fn as_str(self) -> &'static str {
        match self {
            Root::Shared => "shared",
            Root::User => "user",
        }
    }
}

/// One validated name segment: `[A-Za-z0-9_\-\.]+`, excluding `.` and `..`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment(String);

impl Segment {
    pub const MAX_LEN: usize = 255;

    pub fn parse(text: &str) -> Result<Self, String> {
        if text.is_empty() {
            return Err("empty segment".into());
        }
        if text.len() > Self::MAX_LEN {
            return Err(format!("segment longer than {} bytes", Self::MAX_LEN));
        }
        if let Some(bad) = text
            .chars()
            .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')))
        {
            return Err(format!("invalid character {bad:?} in segment `{text}`"));
        }
        if text.chars().all(|c| c == '.') {
            return Err(format!("segment `{text}` is reserved"));
        }
        Ok(Self(text.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A version label `v<n>` with `n >= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionLabel(u32);

impl VersionLabel {
    pub fn new(number: u32) -> Option<Self> {
        (number >= 1).then_some(Self(number))
    }

    pub fn number(self) -> u32 {
        self.0
    }

    pub fn next(self) -> Self {
        Self(self.0 + 1)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let digits = text
            .strip_prefix('v')
            .ok_or_else(|| format!("version label `{text}` must look like v<integer>"))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("version label `{text}` must look like v<integer>"));
        }
        if digits.starts_with('0') {
            return Err(format!("version label `{text}` must be a positive integer without leading zeros"));
        }
        let number: u32 = digits
            .parse()
            .map_err(|_| format!("version number in `{text}` is out of range"))?;
        Ok(Self(number))
    }
}

impl fmt::Display for VersionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    Root,
    UseCase,
    Workflow,
    Version,
    File,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RepoPath {
    root: Root,
    use_case: Option<Segment>,
    workflow: Option<Segment>,
    version: Option<VersionLabel>,
    file: Option<Segment>,
}

impl RepoPath {
    pub fn root(root: Root) -> Self {
        Self {
            root,
            use_case: None,
            workflow: None,
            version: None,
            file: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, MalformedPath> {
        let rest = text
            .strip_prefix('/')
            .ok_or_else(|| MalformedPath::new(text, "path must start with `/`"))?;
        let rest = rest.strip_suffix('/').unwrap_or(rest);
        if rest.is_empty() {
            return Err(MalformedPath::new(text, "missing root directory"));
        }
        let parts: Vec<&str> = rest.split('/').collect();
        if parts.len() > 5 {
            return Err(MalformedPath::new(text, "too many segments"));
        }
        let root = match parts[0] {
            "shared" => Root::Shared,
            "user" => Root::User,
            other => {
                return Err(MalformedPath::new(
                    text,
                    format!("unknown root `{other}` (expected `shared` or `user`)"),
                ))
            }
        };
        let seg = |s: &str| Segment::parse(s).map_err(|reason| MalformedPath::new(text, reason));
        let mut path = Self::root(root);
        if let Some(s) = parts.get(1) {
            path.use_case = Some(seg(s)?);
        }
        if let Some(s) = parts.get(2) {
            path.workflow = Some(seg(s)?);
        }
        if let Some(s) = parts.get(3) {
            path.version =
                Some(VersionLabel::parse(s).map_err(|reason| MalformedPath::new(text, reason))?);
        }
        if let Some(s) = parts.get(4) {
            path.file = Some(seg(s)?);
        }
        Ok(path)
    }

    pub fn depth(&self) -> Depth {
        if self.file.is_some() {
            Depth::File
        } else if self.version.is_some() {
            Depth::Version
        } else if self.workflow.is_some() {
            Depth::Workflow
        } else if self.use_case.is_some() {
            Depth::UseCase
        } else {
            Depth::Root
        }
    }

    pub fn root_kind(&self) -> Root {
        self.root
    }
    pub fn use_case(&self) -> Option<&Segment> {
        self.use_case.as_ref()
    }
    pub fn workflow(&self) -> Option<&Segment> {
        self.workflow.as_ref()
    }
    pub fn version(&self) -> Option<VersionLabel> {
        self.version
    }
    pub fn file(&self) -> Option<&Segment> {
        self.file.as_ref()
    }

    /// Appends the next segment in prefix order. Fails at file depth or when
    /// the text is not valid for that depth.
    pub fn child(&self, name: &str) -> Result<Self, MalformedPath> {
        let mut next = self.clone();
        let err = |reason: String| MalformedPath::new(&format!("{self}/{name}"), reason);
        match self.depth() {
            Depth::Root => next.use_case = Some(Segment::parse(name).map_err(err)?),
            Depth::UseCase => next.workflow = Some(Segment::parse(name).map_err(err)?),
            Depth::Workflow => next.version = Some(VersionLabel::parse(name).map_err(err)?),
            Depth::Version => next.file = Some(Segment::parse(name).map_err(err)?),
            Depth::File => return Err(err("files have no children".into())),
        }
        Ok(next)
    }

    pub fn with_version(&self, version: VersionLabel) -> Option<Self> {
        (self.depth() == Depth::Workflow).then(|| {
            let mut next = self.clone();
            next.version = Some(version);
            next
        })
    }

    pub fn with_root(&self, root: Root) -> Self {
        let mut next = self.clone();
        next.root = root;
        next
    }

    pub fn parent(&self) -> Option<Self> {
        let mut p = self.clone();
        match self.depth() {
            Depth::Root => return None,
            Depth::UseCase => p.use_case = None,
            Depth::Workflow => p.workflow = None,
            Depth::Version => p.version = None,
            Depth::File => p.file = None,
        }
        Some(p)
    }

    /// The innermost segment, as rendered.
    pub fn name(&self) -> String {
        match self.depth() {
            Depth::Root => self.root.as_str().to_owned(),
            Depth::UseCase => self.use_case.as_ref().map(|s| s.to_string()).unwrap_or_default(),
            Depth::Workflow => self.workflow.as_ref().map(|s| s.to_string()).unwrap_or_default(),
            Depth::Version => self.version.map(|v| v.to_string()).unwrap_or_default(),
            Depth::File => self.file.as_ref().map(|s| s.to_string()).unwrap_or_default(),
        }
    }

    /// Segments below the root, in order.
    pub fn segments(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(4);
        if let Some(s) = &self.use_case {
            out.push(s.to_string());
        }
        if let Some(s) = &self.workflow {
            out.push(s.to_string());
        }
        if let Some(v) = self.version {
            out.push(v.to_string());
        }
        if let Some(s) = &self.file {
            out.push(s.to_string());
        }
        out
    }

    /// True when `self` equals `other` or lies beneath it.
    pub fn starts_with(&self, other: &RepoPath) -> bool {
        if self.root != other.root {
            return false;
        }
        let mine = self.segments();
        let theirs = other.segments();
        theirs.len() <= mine.len() && mine.iter().zip(&theirs).all(|(a, b)| a == b)
    }

    /// The version directory this path belongs to, if any.
    pub fn version_dir(&self) -> Option<Self> {
        match self.depth() {
            Depth::Version => Some(self.clone()),
            Depth::File => self.parent(),
            _ => None,
        }
    }

    /// The use case this path belongs to, if any.
    pub fn use_case_dir(&self) -> Option<Self> {
        self.use_case.as_ref().map(|uc| Self {
            root: self.root,
            use_case: Some(uc.clone()),
            workflow: None,
            version: None,
            file: None,
        })
    }

    pub fn workflow_dir(&self) -> Option<Self> {
        self.workflow.as_ref().map(|wf| Self {
            root: self.root,
            use_case: self.use_case.clone(),
            workflow: Some(wf.clone()),
            version: None,
            file: None,
        })
    }
}

impl fmt::Display for RepoPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}", self.root.as_str())?;
        for seg in self.segments() {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

impl FromStr for RepoPath {
    type Err = MalformedPath;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for RepoPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RepoPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Self::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_version_directory() {
        let p = RepoPath::parse("/shared/lsu_ann1/user/v1/").unwrap();
        assert_eq!(p.root_kind(), Root::Shared);
        assert_eq!(p.use_case().unwrap().as_str(), "lsu_ann1");
        assert_eq!(p.workflow().unwrap().as_str(), "user");
        assert_eq!(p.version().unwrap().number(), 1);
        assert_eq!(p.depth(), Depth::Version);
    }

    #[test]
    fn parses_bare_root() {
        let p = RepoPath::parse("/shared").unwrap();
        assert_eq!(p, RepoPath::root(Root::Shared));
        assert_eq!(p.depth(), Depth::Root);
    }

    #[test]
    fn rejects_bad_version_label() {
        assert!(RepoPath::parse("/shared/uc/wf/version1/").is_err());
        assert!(RepoPath::parse("/shared/uc/wf/v0").is_err());
        assert!(RepoPath::parse("/shared/uc/wf/v01").is_err());
        assert!(RepoPath::parse("/shared/uc/wf/v").is_err());
    }

    #[test]
    fn rejects_structural_garbage() {
        for bad in [
            "",
            "shared",
            "/",
            "/etc",
            "/shared//wf",
            "/shared/uc/wf/v1/a/b",
            "/shared/../x",
            "/shared/uc/./v1",
            "/shared/u c",
            "/shared/uc/wf/v1/f.py//",
        ] {
            assert!(RepoPath::parse(bad).is_err(), "{bad} should be rejected");
        }
    }

    #[test]
    fn prefix_relation() {
        let file = RepoPath::parse("/shared/a/b/v2/x.py").unwrap();
        assert!(file.starts_with(&RepoPath::parse("/shared/a").unwrap()));
        assert!(!file.starts_with(&RepoPath::parse("/shared/ab").unwrap()));
        assert!(!file.starts_with(&RepoPath::parse("/user/a").unwrap()));
        assert_eq!(file.version_dir().unwrap().to_string(), "/shared/a/b/v2");
    }

    fn segment() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_.-]{1,12}".prop_filter("dots only", |s| !s.chars().all(|c| c == '.'))
    }

    prop_compose! {
        fn any_path()(
            root in prop_oneof![Just(Root::Shared), Just(Root::User)],
            depth in 0usize..=4,
            uc in segment(),
            wf in segment(),
            ver in 1u32..10_000,
            file in segment(),
        ) -> RepoPath {
            let mut p = RepoPath::root(root);
            if depth >= 1 { p = p.child(&uc).unwrap(); }
            if depth >= 2 { p = p.child(&wf).unwrap(); }
            if depth >= 3 { p = p.child(&format!("v{ver}")).unwrap(); }
            if depth >= 4 { p = p.child(&file).unwrap(); }
            p
        }
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(p in any_path()) {
            let text = p.to_string();
            prop_assert_eq!(RepoPath::parse(&text).unwrap(), p.clone());
            let trailing = format!("{text}/");
            prop_assert_eq!(RepoPath::parse(&trailing).unwrap(), p);
        }
    }
}
