//! Append-only JSON-lines event log.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use cradlewatch_core::canonical;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Event,
    Alert,
    Command,
    CounterArchive,
    Fix,
    ResetHome,
}

impl LogKind {
    /// Inputs drive the engine; the rest are derived from inputs and are what
    /// replay audits.
    pub fn is_input(self) -> bool {
        matches!(self, LogKind::Event | LogKind::Command | LogKind::ResetHome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(rename = "ts")]
    pub ts_ms: i64,
    pub kind: LogKind,
    pub payload: Value,
}

impl LogRecord {
    pub fn new(ts_ms: i64, kind: LogKind, payload: Value) -> Self {
        LogRecord { ts_ms, kind, payload }
    }

    /// Canonical form without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical::to_string(self).expect("log records are always serializable")
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] io::Error),
    #[error("log line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("log line {line}: ts {ts} is before the previous record's {prev}")]
    Backwards { line: usize, ts: i64, prev: i64 },
    #[error("log line {line} is not newline-terminated")]
    TornTail { line: usize },
}

/// Parses a whole log. Every line must be a complete record and timestamps
/// must never decrease.
pub fn read_records<R: BufRead>(mut reader: R) -> Result<Vec<LogRecord>, LogError> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0;
    let mut prev = i64::MIN;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(out);
        }
        line += 1;
        if buf.last() != Some(&b'\n') {
            return Err(LogError::TornTail { line });
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec: LogRecord = serde_json::from_slice(&buf).map_err(|e| LogError::Parse {
            line,
            reason: e.to_string(),
        })?;
        if rec.ts_ms < prev {
            return Err(LogError::Backwards {
                line,
                ts: rec.ts_ms,
                prev,
            });
        }
        prev = rec.ts_ms;
        out.push(rec);
    }
}

/// Reads a log file; a missing file is an empty log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    match File::open(path) {
        Ok(f) => read_records(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

/// Records with `ts >= since`.
pub fn excerpt(records: &[LogRecord], since: Option<i64>) -> &[LogRecord] {
    let since = since.unwrap_or(i64::MIN);
    let start = records.partition_point(|r| r.ts_ms < since);
    &records[start..]
}

/// Appending writer. Each batch goes out in a single write so a crash leaves
/// whole lines behind.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, records: &[LogRecord]) -> io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut batch = String::new();
        for r in records {
            batch.push_str(&r.to_line());
            batch.push('\n');
        }
        self.file.write_all(batch.as_bytes())?;
        self.file.flush()
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.file.sync_all()
    }
}
