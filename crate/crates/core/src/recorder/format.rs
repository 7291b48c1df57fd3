//! Log container layout (all integers little-endian):
//!
//! ```text
//! header:  magic "S4HBAG1\0" | created_ns i64 | meta_count u16 | (key str, value str)*
//! record:  total_len u32 | recv_bus_time_ns i64 | topic str | payload_len u32 | payload
//! ```
//!
//! Strings are `u16` length + UTF-8. `total_len` is the length of the whole
//! record including the `total_len` field itself. Records follow the header
//! back to back until end of file; there is no index or footer.

use std::fs::File;
use std::io::{self, BufReader, ErrorKind, Read, Write};
use std::path::Path;

use crate::msgmodel::decode_envelope;

use super::RecorderError;

pub const LOG_MAGIC: &[u8; 8] = b"S4HBAG1\0";
/// Fixed part of a record: total_len + recv time + topic len + payload len.
pub const RECORD_OVERHEAD: usize = 4 + 8 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LogHeader {
    pub created_ns: i64,
    pub metadata: Vec<(String, String)>,
}

impl LogHeader {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32);
        out.extend_from_slice(LOG_MAGIC);
        out.extend_from_slice(&self.created_ns.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u16).to_le_bytes());
        for (k, v) in &self.metadata {
            put_string(&mut out, k);
            put_string(&mut out, v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub recv_bus_time_ns: i64,
    pub topic: String,
    pub payload: Vec<u8>,
}

impl LogRecord {
    pub fn encoded_len(&self) -> usize {
        RECORD_OVERHEAD + self.topic.len() + self.payload.len()
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&(self.encoded_len() as u32).to_le_bytes());
        out.extend_from_slice(&self.recv_bus_time_ns.to_le_bytes());
        put_string(&mut out, &self.topic);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        w.write_all(&out)
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    let bytes = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Sequential reader that validates every record as it goes.
pub struct LogReader<R> {
    inner: R,
    header: LogHeader,
    offset: u64,
    intact: u64,
    last_recv_ns: Option<i64>,
}

impl LogReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RecorderError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

/// Outcome of reading exactly `buf.len()` bytes.
enum Fill {
    Full,
    /// End of input after this many bytes.
    Short(usize),
}

fn fill(r: &mut impl Read, buf: &mut [u8]) -> io::Result<Fill> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => return Ok(Fill::Short(got)),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Fill::Full)
}

impl<R: Read> LogReader<R> {
    pub fn new(mut inner: R) -> Result<Self, RecorderError> {
        let truncated = |offset| RecorderError::Truncated { offset, intact_records: 0 };
        let mut fixed = [0u8; 18];
        if let Fill::Short(n) = fill(&mut inner, &mut fixed)? {
            if n >= 8 && &fixed[..8] != LOG_MAGIC {
                return Err(RecorderError::format(0, "bad magic"));
            }
            return Err(truncated(0));
        }
        if &fixed[..8] != LOG_MAGIC {
            return Err(RecorderError::format(0, "bad magic"));
        }
        let created_ns = i64::from_le_bytes(fixed[8..16].try_into().unwrap());
        let count = u16::from_le_bytes(fixed[16..18].try_into().unwrap());
        let mut offset = 18u64;
        let mut metadata = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let k = read_string(&mut inner, &mut offset).map_err(|e| e.unwrap_or_else(|| truncated(0)))?;
            let v = read_string(&mut inner, &mut offset).map_err(|e| e.unwrap_or_else(|| truncated(0)))?;
            metadata.push((k, v));
        }
        Ok(Self {
            inner,
            header: LogHeader { created_ns, metadata },
            offset,
            intact: 0,
            last_recv_ns: None,
        })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    /// Records read so far.
    pub fn intact_records(&self) -> u64 {
        self.intact
    }

    fn truncated(&self) -> RecorderError {
        RecorderError::Truncated { offset: self.offset, intact_records: self.intact }
    }

    pub fn next_record(&mut self) -> Result<Option<LogRecord>, RecorderError> {
        let start = self.offset;
        let mut len = [0u8; 4];
        match fill(&mut self.inner, &mut len)? {
            Fill::Short(0) => return Ok(None),
            Fill::Short(_) => return Err(self.truncated()),
            Fill::Full => {}
        }
        let total = u32::from_le_bytes(len) as usize;
        if total < RECORD_OVERHEAD {
            return Err(RecorderError::format(start, format!("record length {total} too small")));
        }
        let mut body = vec![0u8; total - 4];
        if let Fill::Short(_) = fill(&mut self.inner, &mut body)? {
            return Err(self.truncated());
        }
        let recv_bus_time_ns = i64::from_le_bytes(body[..8].try_into().unwrap());
        let topic_len = u16::from_le_bytes(body[8..10].try_into().unwrap()) as usize;
        if 10 + topic_len + 4 > body.len() {
            return Err(RecorderError::format(start, "topic overruns record"));
        }
        let topic = std::str::from_utf8(&body[10..10 + topic_len])
            .map_err(|_| RecorderError::format(start, "topic is not UTF-8"))?
            .to_owned();
        let p = 10 + topic_len;
        let payload_len = u32::from_le_bytes(body[p..p + 4].try_into().unwrap()) as usize;
        if p + 4 + payload_len != body.len() {
            return Err(RecorderError::format(start, "payload length disagrees with record length"));
        }
        let payload = body[p + 4..].to_vec();
        if let Err(e) = decode_envelope(&payload) {
            return Err(RecorderError::format(start, format!("payload does not decode: {e}")));
        }
        if self.last_recv_ns.is_some_and(|last| recv_bus_time_ns < last) {
            return Err(RecorderError::format(start, "receipt times go backwards"));
        }
        self.last_recv_ns = Some(recv_bus_time_ns);
        self.offset += total as u64;
        self.intact += 1;
        Ok(Some(LogRecord { recv_bus_time_ns, topic, payload }))
    }
}

/// `Err(None)` means the input ended mid-string.
fn read_string(r: &mut impl Read, offset: &mut u64) -> Result<String, Option<RecorderError>> {
    let at = *offset;
    let mut len = [0u8; 2];
    match fill(r, &mut len) {
        Ok(Fill::Full) => {}
        Ok(Fill::Short(_)) => return Err(None),
        Err(e) => return Err(Some(e.into())),
    }
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    match fill(r, &mut buf) {
        Ok(Fill::Full) => {}
        Ok(Fill::Short(_)) => return Err(None),
        Err(e) => return Err(Some(e.into())),
    }
    *offset += 2 + buf.len() as u64;
    String::from_utf8(buf).map_err(|_| Some(RecorderError::format(at, "metadata is not UTF-8")))
}
