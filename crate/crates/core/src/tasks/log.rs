use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;

use crate::domain::{LogEntry, TaskId};

/// Append-only `<task>.log` files, one line per entry.
#[derive(Debug, Clone)]
pub struct LogStore {
    dir: PathBuf,
}

impl LogStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(LogStore { dir })
    }

    fn path(&self, task: &TaskId) -> PathBuf {
        self.dir.join(format!("{task}.log"))
    }

    pub fn append(&self, entry: &LogEntry) -> io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(&entry.task_id))?;
        f.write_all(entry.to_line().as_bytes())?;
        f.write_all(b"\n")
    }

    pub fn read(&self, task: &TaskId) -> io::Result<Vec<LogEntry>> {
        let text = match fs::read_to_string(self.path(task)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(text
            .lines()
            .enumerate()
            .filter_map(|(i, line)| LogEntry::parse_line(i as u64, line))
            .collect())
    }
}
