//! Little-endian envelope codec.
//!
//! Envelope = `schema_id: u16` followed by the schema body. Integers are
//! little-endian, floats IEEE-754 binary64 little-endian, strings a `u16`
//! byte length followed by UTF-8 bytes. Enums are a single `u8` code.

use thiserror::Error;

use super::{
    AffectLabel, AffectiveState, BeatTruth, DeviceFeature, Expression, ExpressionEvent, Header,
    HrvFeatures, InvariantViolation, Message, PhysioRaw, PhysioRawChannel, SchemaId,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown schema id {0}")]
    UnknownSchema(u16),
    #[error("input truncated at byte {offset} while reading {field}")]
    Truncated { offset: usize, field: &'static str },
    #[error("{count} trailing bytes after the message body")]
    TrailingBytes { count: usize },
    #[error("malformed UTF-8 in {field} at byte {offset}")]
    MalformedUtf8 { offset: usize, field: &'static str },
    #[error("invalid {field} code {code}")]
    InvalidEnum { field: &'static str, code: u8 },
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
}

/// Encodes `msg` into its envelope bytes after checking its invariants.
pub fn encode_envelope(msg: &Message) -> Result<Vec<u8>, InvariantViolation> {
    msg.validate()?;
    let mut w = Writer(Vec::with_capacity(64));
    w.u16(msg.schema_id() as u16);
    match msg {
        Message::PhysioRaw(m) => {
            w.header(&m.header);
            w.i64(m.device_timestamp_ns);
            w.u16(m.channels.len() as u16);
            for ch in &m.channels {
                w.string(&ch.channel_name);
                w.u32(ch.samples.len() as u32);
                w.0.reserve(ch.samples.len() * 8);
                for s in &ch.samples {
                    w.f64(*s);
                }
            }
        }
        Message::DeviceFeature(m) => {
            w.header(&m.header);
            w.i64(m.device_timestamp_ns);
            w.string(&m.name);
            w.f64(m.value);
        }
        Message::EcgFeatures(m) | Message::PpgFeatures(m) => {
            w.header(&m.header);
            w.i64(m.device_timestamp_ns);
            w.f64(m.rr_ms);
            w.u32(m.peak_count);
            w.f64(m.sdnn_ms);
            w.f64(m.rmssd_ms);
            w.f64(m.pnn50_pct);
            w.f64(m.heart_rate_bpm);
            w.f64(m.window_s);
        }
        Message::ExpressionEvent(m) => {
            w.header(&m.header);
            w.string(&m.human_id);
            w.u8(m.expression.code());
            w.f64(m.confidence);
        }
        Message::AffectiveState(m) => {
            w.header(&m.header);
            w.string(&m.human_id);
            w.u8(m.state.code());
            w.f64(m.heart_rate_bpm);
            w.u8(m.expression.code());
        }
        Message::BeatTruth(m) => {
            w.header(&m.header);
            w.i64(m.beat_time_ns);
        }
    }
    Ok(w.0)
}

/// Reads the schema id without decoding the body.
pub fn peek_schema_id(bytes: &[u8]) -> Result<SchemaId, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let id = r.u16("schema_id")?;
    SchemaId::from_u16(id).ok_or(DecodeError::UnknownSchema(id))
}

/// Decodes one envelope. The whole input must be consumed and the decoded
/// message must satisfy its invariants.
pub fn decode_envelope(bytes: &[u8]) -> Result<Message, DecodeError> {
    let schema = peek_schema_id(bytes)?;
    let mut r = Reader { buf: bytes, pos: 2 };
    let msg = match schema {
        SchemaId::PhysioRaw => {
            let header = r.header()?;
            let device_timestamp_ns = r.i64("device_timestamp_ns")?;
            let count = r.u16("channel_count")? as usize;
            let mut channels = Vec::with_capacity(count.min(1024));
            for _ in 0..count {
                let channel_name = r.string("channel_name")?;
                let n = r.u32("sample_count")? as usize;
                // Bound the allocation by what the input can actually hold.
                if r.remaining() / 8 < n {
                    return Err(DecodeError::Truncated { offset: bytes.len(), field: "samples" });
                }
                let mut samples = Vec::with_capacity(n);
                for _ in 0..n {
                    samples.push(r.f64("samples")?);
                }
                channels.push(PhysioRawChannel { channel_name, samples });
            }
            Message::PhysioRaw(PhysioRaw { header, device_timestamp_ns, channels })
        }
        SchemaId::DeviceFeature => Message::DeviceFeature(DeviceFeature {
            header: r.header()?,
            device_timestamp_ns: r.i64("device_timestamp_ns")?,
            name: r.string("name")?,
            value: r.f64("value")?,
        }),
        SchemaId::EcgFeatures => Message::EcgFeatures(r.hrv_features()?),
        SchemaId::PpgFeatures => Message::PpgFeatures(r.hrv_features()?),
        SchemaId::ExpressionEvent => Message::ExpressionEvent(ExpressionEvent {
            header: r.header()?,
            human_id: r.string("human_id")?,
            expression: r.expression()?,
            confidence: r.f64("confidence")?,
        }),
        SchemaId::AffectiveState => {
            let header = r.header()?;
            let human_id = r.string("human_id")?;
            let code = r.u8("state")?;
            let state = AffectLabel::from_code(code)
                .ok_or(DecodeError::InvalidEnum { field: "state", code })?;
            Message::AffectiveState(AffectiveState {
                header,
                human_id,
                state,
                heart_rate_bpm: r.f64("heart_rate_bpm")?,
                expression: r.expression()?,
            })
        }
        SchemaId::BeatTruth => Message::BeatTruth(BeatTruth {
            header: r.header()?,
            beat_time_ns: r.i64("beat_time_ns")?,
        }),
    };
    if r.remaining() > 0 {
        return Err(DecodeError::TrailingBytes { count: r.remaining() });
    }
    msg.validate()?;
    Ok(msg)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    // Callers validate lengths before encoding.
    fn string(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn header(&mut self, h: &Header) {
        self.u64(h.seq);
        self.i64(h.stamp_ns);
        self.string(&h.source);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated { offset: self.buf.len(), field });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, field)?);
        Ok(out)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, DecodeError> {
        Ok(self.array::<1>(field)?[0])
    }
    fn u16(&mut self, field: &'static str) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array(field)?))
    }
    fn u32(&mut self, field: &'static str) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array(field)?))
    }
    fn u64(&mut self, field: &'static str) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array(field)?))
    }
    fn i64(&mut self, field: &'static str) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.array(field)?))
    }
    fn f64(&mut self, field: &'static str) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.array(field)?))
    }

    fn string(&mut self, field: &'static str) -> Result<String, DecodeError> {
        let len = self.u16(field)? as usize;
        let offset = self.pos;
        let raw = self.take(len, field)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|e| DecodeError::MalformedUtf8 { offset: offset + e.valid_up_to(), field })
    }

    fn header(&mut self) -> Result<Header, DecodeError> {
        Ok(Header {
            seq: self.u64("header.seq")?,
            stamp_ns: self.i64("header.stamp_ns")?,
            source: self.string("header.source")?,
        })
    }

    fn expression(&mut self) -> Result<Expression, DecodeError> {
        let code = self.u8("expression")?;
        Expression::from_code(code).ok_or(DecodeError::InvalidEnum { field: "expression", code })
    }

    fn hrv_features(&mut self) -> Result<HrvFeatures, DecodeError> {
        Ok(HrvFeatures {
            header: self.header()?,
            device_timestamp_ns: self.i64("device_timestamp_ns")?,
            rr_ms: self.f64("rr_ms")?,
            peak_count: self.u32("peak_count")?,
            sdnn_ms: self.f64("sdnn_ms")?,
            rmssd_ms: self.f64("rmssd_ms")?,
            pnn50_pct: self.f64("pnn50_pct")?,
            heart_rate_bpm: self.f64("heart_rate_bpm")?,
            window_s: self.f64("window_s")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_raw() -> Message {
        Message::PhysioRaw(PhysioRaw::default())
    }

    #[test]
    fn empty_physio_raw_is_thirty_bytes() {
        // schema 2 + seq 8 + stamp 8 + source len 2 + device ts 8 + channel count 2
        let bytes = encode_envelope(&empty_raw()).unwrap();
        assert_eq!(bytes.len(), 30);
        assert_eq!(&bytes[..2], &[1, 0]);
    }

    #[test]
    fn nan_sample_is_rejected() {
        let msg = Message::PhysioRaw(PhysioRaw {
            channels: vec![PhysioRawChannel::new("ecg_mv", vec![0.1, f64::NAN])],
            ..Default::default()
        });
        assert!(encode_envelope(&msg).is_err());
    }

    #[test]
    fn unequal_channel_lengths_are_rejected() {
        let msg = Message::PhysioRaw(PhysioRaw {
            channels: vec![
                PhysioRawChannel::new("a", vec![1.0, 2.0]),
                PhysioRawChannel::new("b", vec![1.0]),
            ],
            ..Default::default()
        });
        assert!(encode_envelope(&msg).is_err());
    }

    #[test]
    fn duplicate_channel_names_are_rejected() {
        let msg = Message::PhysioRaw(PhysioRaw {
            channels: vec![PhysioRawChannel::new("a", vec![]), PhysioRawChannel::new("a", vec![])],
            ..Default::default()
        });
        assert!(encode_envelope(&msg).is_err());
    }

    #[test]
    fn oversize_source_is_rejected() {
        let mut msg = empty_raw();
        msg.header_mut().source = "x".repeat(256);
        assert!(encode_envelope(&msg).is_err());
        msg.header_mut().source = "x".repeat(255);
        assert!(encode_envelope(&msg).is_ok());
    }

    #[test]
    fn unknown_schema() {
        assert_eq!(decode_envelope(&[0xff, 0xff]), Err(DecodeError::UnknownSchema(0xffff)));
        assert_eq!(decode_envelope(&[0, 0]), Err(DecodeError::UnknownSchema(0)));
        assert_eq!(decode_envelope(&[8, 0]), Err(DecodeError::UnknownSchema(8)));
    }

    #[test]
    fn trailing_byte_is_rejected() {
        let mut bytes = encode_envelope(&empty_raw()).unwrap();
        bytes.push(0);
        assert_eq!(decode_envelope(&bytes), Err(DecodeError::TrailingBytes { count: 1 }));
    }

    #[test]
    fn every_strict_prefix_is_truncated() {
        let msg = Message::DeviceFeature(DeviceFeature {
            header: Header { seq: 3, stamp_ns: 9, source: "drv".into() },
            device_timestamp_ns: -4,
            name: "rr_ms".into(),
            value: 812.5,
        });
        let bytes = encode_envelope(&msg).unwrap();
        for cut in 0..bytes.len() {
            assert!(
                matches!(decode_envelope(&bytes[..cut]), Err(DecodeError::Truncated { .. })),
                "prefix of length {cut}"
            );
        }
        assert_eq!(decode_envelope(&bytes).unwrap(), msg);
    }

    #[test]
    fn malformed_utf8() {
        let msg = Message::BeatTruth(BeatTruth {
            header: Header { seq: 0, stamp_ns: 0, source: "ab".into() },
            beat_time_ns: 1,
        });
        let mut bytes = encode_envelope(&msg).unwrap();
        // source bytes start after schema(2) + seq(8) + stamp(8) + len(2)
        bytes[20] = 0xff;
        assert!(matches!(decode_envelope(&bytes), Err(DecodeError::MalformedUtf8 { .. })));
    }

    #[test]
    fn bad_enum_code() {
        let msg = Message::ExpressionEvent(ExpressionEvent {
            header: Header::default(),
            human_id: "p1".into(),
            expression: Expression::Fear,
            confidence: 0.5,
        });
        let mut bytes = encode_envelope(&msg).unwrap();
        let idx = bytes.len() - 9;
        assert_eq!(bytes[idx], Expression::Fear.code());
        bytes[idx] = 7;
        assert_eq!(
            decode_envelope(&bytes),
            Err(DecodeError::InvalidEnum { field: "expression", code: 7 })
        );
    }

    #[test]
    fn decode_rejects_non_finite_body() {
        let msg = Message::EcgFeatures(HrvFeatures { pnn50_pct: 10.0, ..Default::default() });
        let mut bytes = encode_envelope(&msg).unwrap();
        // heart_rate_bpm sits 16 bytes before the end (then window_s).
        let n = bytes.len();
        bytes[n - 16..n - 8].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(decode_envelope(&bytes), Err(DecodeError::Invariant(_))));
    }

    #[test]
    fn huge_sample_count_does_not_allocate() {
        let msg = Message::PhysioRaw(PhysioRaw {
            channels: vec![PhysioRawChannel::new("a", vec![])],
            ..Default::default()
        });
        let mut bytes = encode_envelope(&msg).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_envelope(&bytes), Err(DecodeError::Truncated { .. })));
    }
}
