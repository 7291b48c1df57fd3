use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{debug, warn};

use crate::bus::{Delivery, NodeHandle, Subscription};
use crate::msgmodel::{decode_envelope, Message};
use crate::timesync::OffsetEstimator;

use super::format::{LogHeader, LogRecord};
use super::RecorderError;

/// Metadata key prefix for per-stream clock offset estimates.
pub const OFFSET_KEY_PREFIX: &str = "offset_ns:";

struct Writer {
    file: BufWriter<File>,
    records: u64,
    error: Option<io::Error>,
    estimators: BTreeMap<String, OffsetEstimator>,
    /// Sampling rate advertised by each publisher, if any.
    rates: HashMap<String, Option<f64>>,
}

/// An active recording. Call [`RecordingSession::stop`] to finalize the file.
pub struct RecordingSession {
    path: PathBuf,
    header_len: u64,
    created_ns: i64,
    patterns: Vec<String>,
    writer: Arc<Mutex<Writer>>,
    subscription: Option<Subscription>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopSummary {
    pub path: PathBuf,
    pub records: u64,
    pub started_ns: i64,
    pub stopped_ns: i64,
}

/// Starts recording every message matching `patterns` into `path`.
pub fn record<S: AsRef<str>>(
    node: &NodeHandle,
    patterns: &[S],
    path: impl AsRef<Path>,
) -> Result<RecordingSession, RecorderError> {
    let path = path.as_ref().to_path_buf();
    // Validate the patterns before touching the filesystem.
    for p in patterns {
        crate::bus::TopicPattern::parse(p.as_ref())?;
    }
    let created_ns = node.now_ns();
    let header = LogHeader { created_ns, metadata: Vec::new() }.encode();
    let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(&path)?;
    let mut file = BufWriter::new(file);
    file.write_all(&header)?;
    file.flush()?;

    let writer = Arc::new(Mutex::new(Writer {
        file,
        records: 0,
        error: None,
        estimators: BTreeMap::new(),
        rates: HashMap::new(),
    }));
    let sub = {
        let writer = Arc::clone(&writer);
        let node2 = node.clone();
        node.subscribe_many(patterns, move |d| writer.lock().unwrap().append(&node2, d))
    };
    let subscription = match sub {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }
    };
    debug!("recording {} pattern(s) to {}", patterns.len(), path.display());
    Ok(RecordingSession {
        path,
        header_len: header.len() as u64,
        created_ns,
        patterns: patterns.iter().map(|p| p.as_ref().to_owned()).collect(),
        writer,
        subscription: Some(subscription),
    })
}

impl Writer {
    fn append(&mut self, node: &NodeHandle, d: &Delivery) {
        if self.error.is_some() {
            return;
        }
        let rec = LogRecord {
            recv_bus_time_ns: d.recv_time_ns,
            topic: d.topic.to_string(),
            payload: d.envelope.to_vec(),
        };
        let res = rec.write_to(&mut self.file).and_then(|()| self.file.flush());
        if let Err(e) = res {
            warn!("recording stopped: {e}");
            self.error = Some(e);
            return;
        }
        self.records += 1;
        self.observe_clock(node, d);
    }

    fn observe_clock(&mut self, node: &NodeHandle, d: &Delivery) {
        let Ok(msg) = decode_envelope(&d.envelope) else { return };
        let Some(mut device_ns) = msg.device_timestamp_ns() else { return };
        if let Message::PhysioRaw(raw) = &msg {
            // A block leaves the device after its last sample, so compare the
            // receipt time against the end of the block.
            if let Some(fs) = self.publisher_rate(node, &d.publisher) {
                device_ns += (raw.block_len() as f64 * 1e9 / fs).round() as i64;
            }
        }
        self.estimators
            .entry(d.topic.to_string())
            .or_default()
            .observe(device_ns, d.recv_time_ns);
    }

    fn publisher_rate(&mut self, node: &NodeHandle, publisher: &str) -> Option<f64> {
        if publisher.is_empty() {
            return None;
        }
        *self.rates.entry(publisher.to_owned()).or_insert_with(|| {
            node.get_parameter(publisher, "sampling_frequency_hz")
                .ok()
                .flatten()
                .and_then(|v| v.as_f64())
                .filter(|fs| *fs > 0.0)
        })
    }
}

impl RecordingSession {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> u64 {
        self.writer.lock().unwrap().records
    }

    pub fn started_ns(&self) -> i64 {
        self.created_ns
    }

    /// Stops recording, writes the header metadata and closes the file.
    pub fn stop(mut self, now_ns: i64) -> Result<StopSummary, RecorderError> {
        if let Some(sub) = self.subscription.take() {
            sub.unsubscribe();
        }
        let mut w = self.writer.lock().unwrap();
        w.file.flush()?;
        if let Some(e) = w.error.take() {
            return Err(e.into());
        }
        let mut metadata = vec![("patterns".to_owned(), self.patterns.join(" "))];
        for (topic, est) in &w.estimators {
            if let Some(off) = est.estimate_ns() {
                metadata.push((format!("{OFFSET_KEY_PREFIX}{topic}"), off.to_string()));
            }
        }
        let header = LogHeader { created_ns: self.created_ns, metadata }.encode();

        // Rewrite into a sibling file and rename, so the original stays a
        // valid log until the new one is complete.
        let tmp = self.path.with_extension("tmp-finalize");
        {
            let src = w.file.get_mut();
            src.seek(SeekFrom::Start(self.header_len))?;
            let mut out = BufWriter::new(File::create(&tmp)?);
            out.write_all(&header)?;
            io::copy(src, &mut out)?;
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(StopSummary {
            path: self.path.clone(),
            records: w.records,
            started_ns: self.created_ns,
            stopped_ns: now_ns,
        })
    }
}
