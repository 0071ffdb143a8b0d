use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::ids::{TaskId, UseCaseKey, UserId};
use super::path::RepoPath;

/// Lifecycle state of a task. The first six are the middleware checkpoints
/// in the order they are reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Queuing,
    Created,
    Sending,
    Sent,
    Complete,
    Canceled,
    Failed,
}

impl TaskState {
    pub const ALL: [TaskState; 8] = [
        TaskState::Queued,
        TaskState::Queuing,
        TaskState::Created,
        TaskState::Sending,
        TaskState::Sent,
        TaskState::Complete,
        TaskState::Canceled,
        TaskState::Failed,
    ];

    /// The six progress checkpoints of a successful run, in order.
    pub const CHECKPOINTS: [TaskState; 6] = [
        TaskState::Queued,
        TaskState::Queuing,
        TaskState::Created,
        TaskState::Sending,
        TaskState::Sent,
        TaskState::Complete,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Complete | TaskState::Canceled | TaskState::Failed)
    }

    pub fn can_transition_to(self, next: TaskState) -> bool {
        use TaskState::*;
        if self.is_terminal() {
            return false;
        }
        matches!(
            (self, next),
            (Queued, Queuing) | (Queuing, Created) | (Created, Sending) | (Sending, Sent) | (Sent, Complete)
        ) || matches!(next, Canceled | Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Queued => "queued",
            TaskState::Queuing => "queuing",
            TaskState::Created => "created",
            TaskState::Sending => "sending",
            TaskState::Sent => "sent",
            TaskState::Complete => "complete",
            TaskState::Canceled => "canceled",
            TaskState::Failed => "failed",
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown task state `{s}`"))
    }
}

pub fn is_terminal(state: TaskState) -> bool {
    state.is_terminal()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogStream {
    Runtime,
    Error,
}

impl LogStream {
    pub fn as_str(self) -> &'static str {
        match self {
            LogStream::Runtime => "runtime",
            LogStream::Error => "error",
        }
    }
}

impl FromStr for LogStream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "runtime" => Ok(LogStream::Runtime),
            "error" => Ok(LogStream::Error),
            other => Err(format!("unknown log stream `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Position of the entry in the task's log, starting at 0.
    pub seq: u64,
    pub task_id: TaskId,
    pub timestamp: DateTime<Utc>,
    pub stream: LogStream,
    pub checkpoint: Option<TaskState>,
    pub message: String,
}

impl LogEntry {
    /// `<iso8601> <task_id> <stream> <checkpoint|-> <message>`, with newlines
    /// in the message escaped so every entry is one line.
    pub fn to_line(&self) -> String {
        let checkpoint = self.checkpoint.map(TaskState::as_str).unwrap_or("-");
        let message = self.message.replace('\\', "\\\\").replace('\n', "\\n");
        format!(
            "{} {} {} {} {}",
            self.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            self.task_id,
            self.stream.as_str(),
            checkpoint,
            message
        )
    }

    pub fn parse_line(seq: u64, line: &str) -> Option<Self> {
        let mut parts = line.splitn(5, ' ');
        let timestamp = DateTime::parse_from_rfc3339(parts.next()?).ok()?.with_timezone(&Utc);
        let task_id = TaskId::new(parts.next()?);
        let stream = parts.next()?.parse().ok()?;
        let checkpoint = match parts.next()? {
            "-" => None,
            other => Some(other.parse().ok()?),
        };
        let message = unescape(parts.next().unwrap_or(""));
        Some(Self {
            seq,
            task_id,
            timestamp,
            stream,
            checkpoint,
            message,
        })
    }
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Per-run parameter overrides. Values are kept as YAML/JSON scalars.
pub type ParamMap = BTreeMap<String, serde_json::Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub user: UserId,
    pub use_case_key: UseCaseKey,
    pub version_path: RepoPath,
    pub config_path: RepoPath,
    pub state: TaskState,
    pub checkpoints: Vec<LogEntry>,
    pub progress: f64,
    pub result_ref: Option<String>,
    pub parameters: ParamMap,
    pub submitted_at: DateTime<Utc>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_states() {
        assert!(is_terminal(TaskState::Complete));
        assert!(!is_terminal(TaskState::Queued));
        assert!(is_terminal(TaskState::Canceled));
        assert!(is_terminal(TaskState::Failed));
    }

    #[test]
    fn transition_relation_is_exactly_the_documented_set() {
        use TaskState::*;
        let forward = [(Queued, Queuing), (Queuing, Created), (Created, Sending), (Sending, Sent), (Sent, Complete)];
        for from in TaskState::ALL {
            for to in TaskState::ALL {
                let expected = !from.is_terminal()
                    && (forward.contains(&(from, to)) || matches!(to, Canceled | Failed));
                assert_eq!(from.can_transition_to(to), expected, "{from} -> {to}");
            }
        }
    }

    #[test]
    fn log_line_round_trip() {
        let entry = LogEntry {
            seq: 3,
            task_id: TaskId::new("abc123"),
            timestamp: Utc::now(),
            stream: LogStream::Error,
            checkpoint: Some(TaskState::Failed),
            message: "Traceback:\n  line 1 \\ oops".into(),
        };
        let line = entry.to_line();
        assert!(!line.contains('\n'));
        let back = LogEntry::parse_line(3, &line).unwrap();
        assert_eq!(back.message, entry.message);
        assert_eq!(back.checkpoint, entry.checkpoint);
        assert_eq!(back.stream, entry.stream);
        let micros = |t: DateTime<Utc>| t.timestamp_micros();
        assert_eq!(micros(back.timestamp), micros(entry.timestamp));
    }
}
