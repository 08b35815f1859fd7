//! Append-only JSON-Lines record store.
//!
//! One envelope per line, LF terminated. Single writer, many readers:
//! appends go out as one complete line and are synced before the call
//! returns, so a concurrent reader always sees a prefix of whole lines.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassificationRecord;
use crate::scan::ScanRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordType {
    Scan,
    Classification,
}

/// One stored line: version, type tag, write time, and the typed payload
/// kept as raw JSON so foreign stores can still be inspected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEnvelope {
    pub schema_version: u32,
    pub record_type: RecordType,
    pub written_at: DateTime<Utc>,
    pub payload: serde_json::Value,
}

impl RecordEnvelope {
    pub fn scan(record: &ScanRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            record_type: RecordType::Scan,
            written_at: Utc::now(),
            payload: serde_json::to_value(record).expect("scan record serializes"),
        }
    }

    pub fn classification(record: &ClassificationRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            record_type: RecordType::Classification,
            written_at: Utc::now(),
            payload: serde_json::to_value(record).expect("classification record serializes"),
        }
    }

    pub fn scan_payload(&self) -> Result<ScanRecord, StoreError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| StoreError::SchemaViolation {
            record_type: self.record_type,
            detail: e.to_string(),
        })
    }

    pub fn classification_payload(&self) -> Result<ClassificationRecord, StoreError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| StoreError::SchemaViolation {
            record_type: self.record_type,
            detail: e.to_string(),
        })
    }

    fn validate(&self) -> Result<(), StoreError> {
        match self.record_type {
            RecordType::Scan => self.scan_payload().map(|_| ()),
            RecordType::Classification => self.classification_payload().map(|_| ()),
        }
    }

    fn run_id(&self) -> Option<&str> {
        self.payload.get("run_id").and_then(|v| v.as_str())
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{record_type:?} payload violates schema: {detail}")]
    SchemaViolation {
        record_type: RecordType,
        detail: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordFilter {
    pub record_type: Option<RecordType>,
    pub run_id: Option<String>,
}

impl RecordFilter {
    fn admits(&self, envelope: &RecordEnvelope) -> bool {
        if let Some(rt) = self.record_type {
            if envelope.record_type != rt {
                return false;
            }
        }
        if let Some(run_id) = &self.run_id {
            if envelope.run_id() != Some(run_id.as_str()) {
                return false;
            }
        }
        true
    }
}

/// Read-side report: how many lines were skipped as corrupt, and whether
/// the file ended in an unterminated line (an in-flight append or a crash
/// artifact — tolerated, never fatal).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadReport {
    pub total_lines: usize,
    pub corrupt_lines: usize,
    pub unterminated_tail: bool,
}

pub struct Store {
    path: PathBuf,
    file: File,
    next_position: u64,
}

impl Store {
    /// Opens (creating if absent) a store for appending. Existing lines are
    /// counted so positions keep increasing across restarts; a torn
    /// trailing line left by a crash is sealed with a newline so new
    /// appends never merge into it.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(path)
            .map_err(io_err)?;
        let len = file.metadata().map_err(io_err)?.len();
        if len > 0 {
            use std::io::{Read, Seek, SeekFrom};
            file.seek(SeekFrom::Start(len - 1)).map_err(io_err)?;
            let mut last = [0u8; 1];
            file.read_exact(&mut last).map_err(io_err)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(io_err)?;
                file.sync_data().map_err(io_err)?;
            }
        }
        let existing = BufReader::new(File::open(path).map_err(io_err)?)
            .lines()
            .count() as u64;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_position: existing,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates, writes one line, and syncs. The returned position is the
    /// line ordinal and strictly increases.
    pub fn append(&mut self, envelope: &RecordEnvelope) -> Result<u64, StoreError> {
        envelope.validate()?;
        let mut line =
            serde_json::to_string(envelope).map_err(|e| StoreError::SchemaViolation {
                record_type: envelope.record_type,
                detail: e.to_string(),
            })?;
        line.push('\n');
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io_err)?;
        self.file.sync_data().map_err(io_err)?;
        let position = self.next_position;
        self.next_position += 1;
        Ok(position)
    }

    /// Reads every decodable envelope in append order. Corrupt lines
    /// (foreign junk, torn mid-file writes) are skipped and counted. An
    /// unterminated final line — an append still in flight, or a crash
    /// artifact — is excluded and flagged, so concurrent readers always
    /// see a clean prefix of whole lines.
    pub fn load_all(
        path: &Path,
        filter: Option<&RecordFilter>,
    ) -> Result<(Vec<RecordEnvelope>, ReadReport), StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(io_err)?;
        let mut reader = BufReader::new(file);
        let mut report = ReadReport::default();
        let mut out = Vec::new();
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = reader.read_until(b'\n', &mut buf).map_err(io_err)?;
            if n == 0 {
                break;
            }
            if buf.last() != Some(&b'\n') {
                report.unterminated_tail = true;
                break;
            }
            let line = String::from_utf8_lossy(&buf[..buf.len() - 1]);
            if line.is_empty() {
                continue;
            }
            report.total_lines += 1;
            let parsed = serde_json::from_str::<RecordEnvelope>(&line)
                .ok()
                .filter(|envelope| envelope.validate().is_ok());
            match parsed {
                Some(envelope) => {
                    if filter.is_none_or(|f| f.admits(&envelope)) {
                        out.push(envelope);
                    }
                }
                None => report.corrupt_lines += 1,
            }
        }
        Ok((out, report))
    }
}

/// Record sink that appends scan records to a store.
pub struct StoreSink<'a> {
    store: &'a mut Store,
}

impl<'a> StoreSink<'a> {
    pub fn new(store: &'a mut Store) -> Self {
        Self { store }
    }
}

impl crate::scan::RecordSink for StoreSink<'_> {
    fn accept(
        &mut self,
        record: &ScanRecord,
    ) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        self.store
            .append(&RecordEnvelope::scan(record))
            .map(|_| ())
            .map_err(|e| Box::new(e) as Box<dyn std::error::Error + Send + Sync>)
    }
}
