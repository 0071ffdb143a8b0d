use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ids::{DatasetId, SiteId, UserId};
use super::path::RepoPath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    DataOwner,
    WorkflowDesigner,
    DataAnalyst,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::DataOwner, Role::WorkflowDesigner, Role::DataAnalyst];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    /// Editing `steps[*].params` and `stop` of a workflow configuration.
    WriteParams,
    /// Every other mutation: scripts, folders, structural config keys.
    WriteStructure,
    Execute,
    Grant,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Read,
        Action::WriteParams,
        Action::WriteStructure,
        Action::Execute,
        Action::Grant,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub user_id: UserId,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
    /// Sites this principal owns data on (meaningful for data owners).
    #[serde(default)]
    pub owned_sites: BTreeSet<SiteId>,
    /// Bootstrap administrator; bypasses the role table.
    #[serde(default)]
    pub admin: bool,
}

impl Principal {
    pub fn new(user_id: impl Into<UserId>, roles: impl IntoIterator<Item = Role>) -> Self {
        Self {
            user_id: user_id.into(),
            roles: roles.into_iter().collect(),
            owned_sites: BTreeSet::new(),
            admin: false,
        }
    }

    pub fn bootstrap_admin(user_id: impl Into<UserId>) -> Self {
        Self {
            admin: true,
            ..Self::new(user_id, [])
        }
    }

    pub fn owning(mut self, sites: impl IntoIterator<Item = SiteId>) -> Self {
        self.owned_sites.extend(sites);
        self
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }
}

/// What an explicit permission applies to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResourcePattern {
    /// The path and everything beneath it.
    RepoPrefix(RepoPath),
    Dataset { site: SiteId, dataset: DatasetId },
}

impl fmt::Display for ResourcePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourcePattern::RepoPrefix(p) => write!(f, "{p}"),
            ResourcePattern::Dataset { site, dataset } => write!(f, "dataset:{site}/{dataset}"),
        }
    }
}

impl FromStr for ResourcePattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("dataset:") {
            let (site, dataset) = rest
                .split_once('/')
                .ok_or_else(|| format!("dataset pattern `{s}` must be dataset:<site>/<id>"))?;
            return Ok(ResourcePattern::Dataset {
                site: SiteId::new(site),
                dataset: DatasetId::new(dataset),
            });
        }
        RepoPath::parse(s)
            .map(ResourcePattern::RepoPrefix)
            .map_err(|e| e.to_string())
    }
}

impl Serialize for ResourcePattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourcePattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permission {
    pub principal: UserId,
    pub resource: ResourcePattern,
    pub actions: BTreeSet<Action>,
}

/// A concrete resource an action is requested on, along with the facts the
/// role rules need.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Resource {
    Repo {
        path: RepoPath,
        /// Owner of the tree for `/user/...` paths; `None` for shared paths.
        owner: Option<UserId>,
        /// Whether the containing version is enabled (true above version depth).
        enabled: bool,
    },
    Dataset {
        site: SiteId,
        dataset: DatasetId,
    },
    Task {
        owner: UserId,
    },
    /// Key issuance and principal administration.
    Credentials,
}
