use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ids::{DatasetId, KeyId, SiteId, TaskId, UserId};
use super::task::ParamMap;

/// Named byte blobs: scripts, input artifacts or outputs.
pub type FileSet = BTreeMap<String, Vec<u8>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSite {
    pub site_id: SiteId,
    pub endpoint: String,
    #[serde(default)]
    pub datasets: BTreeMap<DatasetId, String>,
    pub api_key_id: KeyId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Command {
    Fit,
    Predict,
    Aggregate,
    Terminate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Fit => "Fit",
            Command::Predict => "Predict",
            Command::Aggregate => "Aggregate",
            Command::Terminate => "Terminate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Fit" => Ok(Command::Fit),
            "Predict" => Ok(Command::Predict),
            "Aggregate" => Ok(Command::Aggregate),
            "Terminate" => Ok(Command::Terminate),
            other => Err(format!("unknown command `{other}`")),
        }
    }
}

/// Name of the command file inside a step's input artifact set.
pub const COMMAND_FILE: &str = "command.txt";

pub fn render_command_file(command: Command, iteration: u32) -> String {
    format!("COMMAND={command}\nITERATION={iteration}")
}

pub fn parse_command_file(text: &str) -> Option<(Command, u32)> {
    let mut command = None;
    let mut iteration = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("COMMAND=") {
            command = v.parse().ok();
        } else if let Some(v) = line.strip_prefix("ITERATION=") {
            iteration = v.trim().parse().ok();
        }
    }
    Some((command?, iteration?))
}

/// The unit of analysis shipped to one data site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepBundle {
    pub task_id: TaskId,
    /// The user the task runs for; dataset grants are checked against it.
    pub user: UserId,
    pub iteration: u32,
    pub site_id: SiteId,
    pub step_index: usize,
    pub script_name: String,
    #[serde(default)]
    pub scripts: FileSet,
    pub params: ParamMap,
    pub command: Command,
    /// Routed artifacts keyed `<producer-site>/<name>`, plus the command file
    /// at its bare name.
    #[serde(default)]
    pub inputs: FileSet,
    pub dataset_ids: Vec<DatasetId>,
    pub keep_local_copy: bool,
    pub timestamp_results: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub task_id: TaskId,
    pub iteration: u32,
    pub site_id: SiteId,
    pub step_index: usize,
    #[serde(default)]
    pub artifacts: FileSet,
    pub metrics: BTreeMap<String, f64>,
    pub local_copy_kept: bool,
}

/// Parses a `metrics` file of `key=value` lines. Blank lines and `#`
/// comments are skipped; malformed lines are reported.
pub fn parse_metrics(text: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("metrics line {}: expected key=value", lineno + 1))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| format!("metrics line {}: `{}` is not a number", lineno + 1, v.trim()))?;
        out.insert(k.trim().to_owned(), value);
    }
    Ok(out)
}
