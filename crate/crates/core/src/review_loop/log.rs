//! Append-only run log (`decisions.jsonl`): one JSON event per line.
//!
//! The first event describes the run (`init`), followed by review
//! `decision`s and per-iteration test `evaluation`s in the order they were
//! made durable. Every append is flushed to disk before it is
//! acknowledged; a torn final line left by a crash is dropped when the log
//! is reopened.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::Verdict;
use crate::disector::SectionCount;
use crate::error::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRef {
    pub image_id: String,
    pub mouse_id: String,
    pub section: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitEvent {
    pub schema_version: u32,
    pub run_id: String,
    pub test_mouse: String,
    pub items: Vec<ItemRef>,
}

/// One accept/reject verdict. Iteration 0 holds the bootstrap review of
/// the classical-pipeline masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub image_id: String,
    pub iteration: u32,
    pub verdict: Verdict,
    pub reviewer: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEvent {
    pub iteration: u32,
    pub error_pct: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<SectionCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Init(InitEvent),
    Decision(ReviewDecision),
    Evaluation(EvaluationEvent),
}

pub fn now_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Parse a complete log; blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<LogEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Corrupt {
                path: "decision log".into(),
                reason: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

pub fn render_log(events: &[LogEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct DecisionLog {
    path: PathBuf,
}

impl DecisionLog {
    pub fn create(path: impl AsRef<Path>, init: InitEvent) -> Result<DecisionLog> {
        let path = path.as_ref().to_path_buf();
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let log = DecisionLog { path };
        log.append(&LogEvent::Init(init))?;
        Ok(log)
    }

    /// Open an existing log, truncating a torn trailing line.
    pub fn open(path: impl AsRef<Path>) -> Result<DecisionLog> {
        let path = path.as_ref().to_path_buf();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            let f = OpenOptions::new().write(true).open(&path).map_err(|e| Error::io(&path, e))?;
            f.set_len(keep as u64).map_err(|e| Error::io(&path, e))?;
            f.sync_all().map_err(|e| Error::io(&path, e))?;
        }
        Ok(DecisionLog { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &LogEvent) -> Result<()> {
        let line = serde_json::to_string(event)? + "\n";
        let mut f: File = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))
    }

    pub fn read(&self) -> Result<Vec<LogEvent>> {
        let text = std::fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        parse_log(&text)
    }
}
