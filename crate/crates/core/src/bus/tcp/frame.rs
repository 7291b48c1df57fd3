//! Framing for the TCP transport.
//!
//! Each direction starts with the 4-byte magic `S4H1`, followed by frames
//! `[u32 frame_len][u8 frame_type][body]`. `frame_len` counts the type byte
//! plus the body. All integers little-endian, strings `u16` length + UTF-8.

use std::io::{self, Read, Write};

use crate::msgmodel::SchemaId;

use super::super::{ParameterValue, TopicInfo};

pub const MAGIC: &[u8; 4] = b"S4H1";
/// Largest accepted `frame_len`.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

const SUB: u8 = 1;
const UNSUB: u8 = 2;
const MSG: u8 = 3;
const PARAM_REQ: u8 = 4;
const PARAM_REP: u8 = 5;
const LIST_REQ: u8 = 6;
const LIST_REP: u8 = 7;
const HELLO: u8 = 8;

const TAG_NOT_SET: u8 = 0;
const TAG_FLOAT: u8 = 1;
const TAG_INT: u8 = 2;
const TAG_STRING: u8 = 3;
const TAG_BOOL: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ParamStatus {
    Ok = 0,
    UnknownNode = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Sub(String),
    Unsub(String),
    /// `publisher` is the originating node as seen by the broker; brokers
    /// ignore it on frames they receive.
    Msg { topic: String, publisher: String, envelope: Vec<u8> },
    ParamReq { corr_id: u32, node: String, names: Vec<String> },
    ParamRep { corr_id: u32, status: ParamStatus, entries: Vec<(String, Option<ParameterValue>)> },
    ListReq { corr_id: u32 },
    ListRep { corr_id: u32, entries: Vec<TopicInfo> },
    /// Client → broker: register a node. Broker → client: registration accepted.
    Hello { node: String, params: Vec<(String, ParameterValue)> },
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Malformed(String),
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, FrameError> {
    Err(FrameError::Malformed(msg.into()))
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Body(vec![0, 0, 0, 0]);
        match self {
            Frame::Sub(p) => {
                b.u8(SUB);
                b.string(p);
            }
            Frame::Unsub(p) => {
                b.u8(UNSUB);
                b.string(p);
            }
            Frame::Msg { topic, publisher, envelope } => {
                b.u8(MSG);
                b.string(topic);
                b.string(publisher);
                b.0.extend_from_slice(envelope);
            }
            Frame::ParamReq { corr_id, node, names } => {
                b.u8(PARAM_REQ);
                b.u32(*corr_id);
                b.string(node);
                b.u16(names.len() as u16);
                for n in names {
                    b.string(n);
                }
            }
            Frame::ParamRep { corr_id, status, entries } => {
                b.u8(PARAM_REP);
                b.u32(*corr_id);
                b.u8(*status as u8);
                b.u16(entries.len() as u16);
                for (name, value) in entries {
                    b.string(name);
                    b.value(value.as_ref());
                }
            }
            Frame::ListReq { corr_id } => {
                b.u8(LIST_REQ);
                b.u32(*corr_id);
            }
            Frame::ListRep { corr_id, entries } => {
                b.u8(LIST_REP);
                b.u32(*corr_id);
                b.u32(entries.len() as u32);
                for e in entries {
                    b.string(&e.topic);
                    b.u16(e.schema_id as u16);
                    b.string(&e.publisher);
                    b.0.extend_from_slice(&e.dropped.to_le_bytes());
                }
            }
            Frame::Hello { node, params } => {
                b.u8(HELLO);
                b.string(node);
                b.u16(params.len() as u16);
                for (name, value) in params {
                    b.string(name);
                    b.value(Some(value));
                }
            }
        }
        let len = (b.0.len() - 4) as u32;
        b.0[..4].copy_from_slice(&len.to_le_bytes());
        b.0
    }

    pub fn decode(frame: &[u8]) -> Result<Frame, FrameError> {
        let Some((&kind, body)) = frame.split_first() else {
            return malformed("empty frame");
        };
        let mut r = Cursor { buf: body, pos: 0 };
        let frame = match kind {
            SUB => Frame::Sub(r.string()?),
            UNSUB => Frame::Unsub(r.string()?),
            MSG => {
                let topic = r.string()?;
                let publisher = r.string()?;
                let envelope = body[r.pos..].to_vec();
                r.pos = body.len();
                Frame::Msg { topic, publisher, envelope }
            }
            PARAM_REQ => {
                let corr_id = r.u32()?;
                let node = r.string()?;
                let n = r.u16()?;
                let names = (0..n).map(|_| r.string()).collect::<Result<_, _>>()?;
                Frame::ParamReq { corr_id, node, names }
            }
            PARAM_REP => {
                let corr_id = r.u32()?;
                let status = match r.u8()? {
                    0 => ParamStatus::Ok,
                    1 => ParamStatus::UnknownNode,
                    s => return malformed(format!("bad PARAM_REP status {s}")),
                };
                let n = r.u16()?;
                let mut entries = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    entries.push((r.string()?, r.value()?));
                }
                Frame::ParamRep { corr_id, status, entries }
            }
            LIST_REQ => Frame::ListReq { corr_id: r.u32()? },
            LIST_REP => {
                let corr_id = r.u32()?;
                let n = r.u32()?;
                let mut entries = Vec::new();
                for _ in 0..n {
                    let topic = r.string()?;
                    let raw = r.u16()?;
                    let schema_id = SchemaId::from_u16(raw)
                        .ok_or_else(|| FrameError::Malformed(format!("unknown schema {raw}")))?;
                    let publisher = r.string()?;
                    let dropped = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    entries.push(TopicInfo { topic, schema_id, publisher, dropped });
                }
                Frame::ListRep { corr_id, entries }
            }
            HELLO => {
                let node = r.string()?;
                let n = r.u16()?;
                let mut params = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let name = r.string()?;
                    match r.value()? {
                        Some(v) => params.push((name, v)),
                        None => return malformed("HELLO parameter without a value"),
                    }
                }
                Frame::Hello { node, params }
            }
            other => return malformed(format!("unknown frame type {other}")),
        };
        if r.pos != body.len() {
            return malformed(format!("{} trailing bytes in frame", body.len() - r.pos));
        }
        Ok(frame)
    }
}

pub fn write_magic(w: &mut impl Write) -> io::Result<()> {
    w.write_all(MAGIC)
}

pub fn read_magic(r: &mut impl Read) -> Result<(), FrameError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != MAGIC {
        return malformed(format!("bad magic {m:02x?}"));
    }
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream at a frame
/// boundary.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_FRAME_LEN {
        return malformed(format!("frame length {len} out of range"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Frame::decode(&buf).map(Some)
}

struct Body(Vec<u8>);

impl Body {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        let bytes = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
        self.u16(bytes.len() as u16);
        self.0.extend_from_slice(bytes);
    }
    fn value(&mut self, v: Option<&ParameterValue>) {
        match v {
            None => self.u8(TAG_NOT_SET),
            Some(ParameterValue::Float(f)) => {
                self.u8(TAG_FLOAT);
                self.0.extend_from_slice(&f.to_le_bytes());
            }
            Some(ParameterValue::Int(i)) => {
                self.u8(TAG_INT);
                self.0.extend_from_slice(&i.to_le_bytes());
            }
            Some(ParameterValue::Str(s)) => {
                self.u8(TAG_STRING);
                self.string(s);
            }
            Some(ParameterValue::Bool(b)) => {
                self.u8(TAG_BOOL);
                self.u8(*b as u8);
            }
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.buf.len() - self.pos < n {
            return malformed("frame body truncated");
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, FrameError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| FrameError::Malformed("string is not UTF-8".into()))
    }
    fn value(&mut self) -> Result<Option<ParameterValue>, FrameError> {
        Ok(match self.u8()? {
            TAG_NOT_SET => None,
            TAG_FLOAT => Some(ParameterValue::Float(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))),
            TAG_INT => Some(ParameterValue::Int(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))),
            TAG_STRING => Some(ParameterValue::Str(self.string()?)),
            TAG_BOOL => match self.u8()? {
                0 => Some(ParameterValue::Bool(false)),
                1 => Some(ParameterValue::Bool(true)),
                b => return malformed(format!("bad bool byte {b}")),
            },
            t => return malformed(format!("unknown parameter tag {t}")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let frames = vec![
            Frame::Sub("/humans/**".into()),
            Frame::Unsub("/humans/**".into()),
            Frame::Msg { topic: "/experiment/events".into(), publisher: "bridge".into(), envelope: vec![7, 0, 1, 2] },
            Frame::ParamReq { corr_id: 9, node: "n".into(), names: vec!["a".into(), "b".into()] },
            Frame::ParamRep {
                corr_id: 9,
                status: ParamStatus::Ok,
                entries: vec![
                    ("a".into(), Some(ParameterValue::Float(250.0))),
                    ("b".into(), None),
                    ("c".into(), Some(ParameterValue::Str("mV".into()))),
                    ("d".into(), Some(ParameterValue::Bool(true))),
                    ("e".into(), Some(ParameterValue::Int(-3))),
                ],
            },
            Frame::ListReq { corr_id: 1 },
            Frame::ListRep {
                corr_id: 1,
                entries: vec![TopicInfo {
                    topic: "/experiment/events".into(),
                    schema_id: SchemaId::DeviceFeature,
                    publisher: "bridge".into(),
                    dropped: 4,
                }],
            },
            Frame::Hello { node: "x".into(), params: vec![("unit".into(), "mV".into())] },
        ];
        for f in frames {
            let bytes = f.encode();
            let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
            assert_eq!(len, bytes.len() - 4);
            let back = read_frame(&mut &bytes[..]).unwrap().unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn sub_frame_layout() {
        let bytes = Frame::Sub("/**".into()).encode();
        assert_eq!(bytes, [6, 0, 0, 0, 1, 3, 0, b'/', b'*', b'*']);
    }

    #[test]
    fn malformed_frames() {
        assert!(matches!(read_frame(&mut &[0u8, 0, 0, 0][..]), Err(FrameError::Malformed(_))));
        assert!(matches!(read_frame(&mut &[1u8, 0, 0, 0, 99][..]), Err(FrameError::Malformed(_))));
        assert!(matches!(read_frame(&mut &[2u8, 0, 0, 0, 6, 0][..]), Err(FrameError::Malformed(_))));
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
        assert!(read_magic(&mut &b"S4H2"[..]).is_err());
    }
}
