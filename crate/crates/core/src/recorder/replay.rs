use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use log::warn;

use crate::bus::NodeHandle;

use super::format::{LogReader, LogRecord};
use super::RecorderError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub published: u64,
    pub interrupted: bool,
}

/// Reads and validates a whole log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, RecorderError> {
    let mut reader = LogReader::open(path)?;
    let mut out = Vec::new();
    while let Some(r) = reader.next_record()? {
        out.push(r);
    }
    Ok(out)
}

/// Republishes every record of `path` on its original topic with the
/// original payload bytes. Gaps between records are scaled by `1 / rate`.
/// The log is validated completely before the first message goes out.
pub fn replay(
    node: &NodeHandle,
    path: impl AsRef<Path>,
    rate: f64,
    stop: &AtomicBool,
) -> Result<ReplaySummary, RecorderError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(RecorderError::InvalidRate(rate));
    }
    let records = read_log(path)?;
    let clock = node.clock();
    let start = clock.now_ns();
    let mut published = 0;
    let Some(first) = records.first().map(|r| r.recv_bus_time_ns) else {
        return Ok(ReplaySummary { published, interrupted: false });
    };
    for rec in records {
        let offset = ((rec.recv_bus_time_ns - first) as f64 / rate).round() as i64;
        if !clock.sleep_until(start + offset, stop) {
            return Ok(ReplaySummary { published, interrupted: true });
        }
        match node.publish_envelope(&rec.topic, Arc::from(rec.payload)) {
            Ok(()) => published += 1,
            Err(e) => warn!("replay of {} failed: {e}", rec.topic),
        }
    }
    Ok(ReplaySummary { published, interrupted: false })
}
