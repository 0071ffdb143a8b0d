//! Shared domain types. Everything here is an immutable value object.

mod access;
mod config;
mod ids;
mod path;
mod site;
mod task;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use access::{Action, Permission, Principal, Resource, ResourcePattern, Role};
pub use config::{DatasetRef, StepSpec, StoppingCondition, WorkflowConfig};
pub use ids::{DatasetId, KeyId, SiteId, TaskId, UseCaseKey, UserId};
pub use path::{Depth, MalformedPath, RepoPath, Root, Segment, VersionLabel};
pub use site::{
    parse_command_file, parse_metrics, render_command_file, Command, DataSite, FileSet, StepBundle,
    StepOutput, COMMAND_FILE,
};
pub use task::{is_terminal, LogEntry, LogStream, ParamMap, Task, TaskState};

pub fn parse_repo_path(text: &str) -> Result<RepoPath, MalformedPath> {
    RepoPath::parse(text)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseCase {
    pub key: UseCaseKey,
    pub name: String,
    pub owner: UserId,
    pub site_ids: Vec<SiteId>,
    pub created_at: DateTime<Utc>,
}
