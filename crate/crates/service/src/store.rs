//! Append-only event log (`events.jsonl`) with periodic snapshots
//! (`snapshot.json`). State is rebuilt at startup from the latest snapshot
//! plus the log lines written after it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use conceptblend::study_stats::RankingRecord;
use serde::{Deserialize, Serialize};

use crate::study::Session;
use crate::ServiceError;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated(Session),
    RankingAccepted {
        session_id: String,
        batch_id: String,
        record: RankingRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub session_id: String,
    pub batch_id: String,
    pub record: RankingRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub sessions: BTreeMap<String, Session>,
    /// Pair ids already ranked, per session.
    pub submitted: BTreeMap<String, BTreeSet<String>>,
    pub records: Vec<StoredRecord>,
}

impl StudyState {
    fn apply(&mut self, event: &Event) {
        match event {
            Event::SessionCreated(s) => {
                self.sessions.insert(s.session_id.clone(), s.clone());
            }
            Event::RankingAccepted {
                session_id,
                batch_id,
                record,
            } => {
                self.submitted
                    .entry(session_id.clone())
                    .or_default()
                    .insert(record.pair.clone());
                self.records.push(StoredRecord {
                    session_id: session_id.clone(),
                    batch_id: batch_id.clone(),
                    record: record.clone(),
                });
            }
        }
    }

    pub fn batch_known(&self, batch_id: &str) -> bool {
        self.sessions.values().any(|s| s.batch_id == batch_id)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    log_lines: u64,
    state: StudyState,
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    lines: u64,
    snapshot_every: usize,
    since_snapshot: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

impl EventLog {
    pub fn open(dir: &Path, snapshot_every: usize) -> Result<(Self, StudyState), ServiceError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (skip, mut state) = match fs::read_to_string(&snap_path) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text).map_err(|e| io_err(&snap_path, e))?;
                (snap.log_lines, snap.state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, StudyState::default()),
            Err(e) => return Err(io_err(&snap_path, e)),
        };

        let log_path = dir.join(LOG_FILE);
        let mut lines = 0u64;
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(|e| io_err(&log_path, e))?);
            for line in reader.lines() {
                let line = line.map_err(|e| io_err(&log_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                if lines > skip {
                    let event: Event = serde_json::from_str(&line)
                        .map_err(|e| io_err(&log_path, format!("line {lines}: {e}")))?;
                    state.apply(&event);
                }
            }
        }
        if lines < skip {
            return Err(ServiceError::Internal(format!(
                "{} covers {skip} events but the log has only {lines}",
                snap_path.display()
            )));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        Ok((
            Self {
                dir: dir.to_path_buf(),
                file,
                lines,
                snapshot_every: snapshot_every.max(1),
                since_snapshot: (lines - skip) as usize,
            },
            state,
        ))
    }

    /// Durably appends `event`, then applies it to `state`.
    pub fn append(&mut self, event: &Event, state: &RwLock<StudyState>) -> Result<(), ServiceError> {
        let log_path = self.dir.join(LOG_FILE);
        let mut line = serde_json::to_string(event).map_err(|e| io_err(&log_path, e))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.sync_data())
            .map_err(|e| io_err(&log_path, e))?;
        self.lines += 1;
        self.since_snapshot += 1;
        state.write().expect("state lock").apply(event);
        if self.since_snapshot >= self.snapshot_every {
            self.snapshot(&state.read().expect("state lock"))?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self, state: &StudyState) -> Result<(), ServiceError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = Snapshot {
            log_lines: self.lines,
            state: state.clone(),
        };
        let text = serde_json::to_string(&snap).map_err(|e| io_err(&path, e))?;
        fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        self.since_snapshot = 0;
        Ok(())
    }
}
