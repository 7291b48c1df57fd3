//! Synchronized multi-topic record and replay.
//!
//! A recording is one append-only file: a header followed by every matching
//! message in broker receipt order, stamped with its receipt (bus) time. The
//! publisher and device timestamps stay inside the payloads; per-stream
//! clock offset estimates are stored in the header metadata when the
//! session stops.

mod format;
mod replay;
mod session;

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::bus::BusError;
use crate::msgmodel::{peek_schema_id, SchemaId};

pub use format::{LogHeader, LogReader, LogRecord, LOG_MAGIC, RECORD_OVERHEAD};
pub use replay::{read_log, replay, ReplaySummary};
pub use session::{record, RecordingSession, StopSummary, OFFSET_KEY_PREFIX};

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("log format error at byte {offset}: {reason}")]
    LogFormat { offset: u64, reason: String },
    #[error("log truncated at byte {offset} after {intact_records} intact records")]
    Truncated { offset: u64, intact_records: u64 },
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("invalid replay rate {0}")]
    InvalidRate(f64),
}

impl RecorderError {
    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        RecorderError::LogFormat { offset, reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicSummary {
    pub schema_id: SchemaId,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogSummary {
    pub created_ns: i64,
    pub metadata: Vec<(String, String)>,
    pub records: u64,
    /// Receipt times of the first and last record; `None` for an empty log.
    pub span_ns: Option<(i64, i64)>,
    pub topics: BTreeMap<String, TopicSummary>,
}

/// Scans a log once and summarizes it per topic.
pub fn list_log(path: impl AsRef<Path>) -> Result<LogSummary, RecorderError> {
    let mut reader = LogReader::open(path)?;
    let mut topics: BTreeMap<String, TopicSummary> = BTreeMap::new();
    let mut span: Option<(i64, i64)> = None;
    while let Some(rec) = reader.next_record()? {
        let schema_id = peek_schema_id(&rec.payload).expect("validated by reader");
        topics.entry(rec.topic).or_insert(TopicSummary { schema_id, count: 0 }).count += 1;
        span = Some(match span {
            None => (rec.recv_bus_time_ns, rec.recv_bus_time_ns),
            Some((first, _)) => (first, rec.recv_bus_time_ns),
        });
    }
    Ok(LogSummary {
        created_ns: reader.header().created_ns,
        metadata: reader.header().metadata.clone(),
        records: reader.intact_records(),
        span_ns: span,
        topics,
    })
}
