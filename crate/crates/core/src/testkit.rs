//! Seeded generators of valid messages and topic names, and fixed sample
//! messages used for documented encodings. Intended for tests and tooling.

use rand::distr::Alphanumeric;
use rand::Rng;

use crate::msgmodel::{
    AffectLabel, AffectiveState, BeatTruth, DeviceFeature, Expression, ExpressionEvent, Field, Header,
    HrvFeatures, Message, PhysioRaw, PhysioRawChannel, SchemaId, SensorType, TopicName, MAX_TOKEN_LEN,
};

const TOKEN_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_";

/// A random topic token of 1..=`MAX_TOKEN_LEN` characters.
pub fn random_token(rng: &mut impl Rng) -> String {
    let len = if rng.random_bool(0.1) { MAX_TOKEN_LEN } else { rng.random_range(1..=12) };
    (0..len).map(|_| TOKEN_CHARS[rng.random_range(0..TOKEN_CHARS.len())] as char).collect()
}

pub fn random_topic_name(rng: &mut impl Rng) -> TopicName {
    let sensor = SensorType::ALL[rng.random_range(0..SensorType::ALL.len())];
    let field = Field::ALL[rng.random_range(0..Field::ALL.len())];
    TopicName::new(random_token(rng), sensor, random_token(rng), field).expect("generated tokens are valid")
}

fn short_string(rng: &mut impl Rng, max: usize) -> String {
    let len = rng.random_range(0..=max);
    // Mix ASCII and multi-byte characters, staying within `max` bytes.
    let mut s = String::new();
    while s.len() < len {
        let c = if rng.random_bool(0.8) { rng.sample(Alphanumeric) as char } else { 'µ' };
        if s.len() + c.len_utf8() > len {
            break;
        }
        s.push(c);
    }
    s
}

fn finite(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::MAX * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        3 => f64::MIN_POSITIVE,
        _ => rng.random_range(-1e6..1e6),
    }
}

fn header(rng: &mut impl Rng) -> Header {
    Header {
        seq: rng.random(),
        stamp_ns: rng.random_range(0..=i64::MAX),
        source: short_string(rng, 40),
    }
}

fn hrv(rng: &mut impl Rng) -> HrvFeatures {
    HrvFeatures {
        header: header(rng),
        device_timestamp_ns: rng.random(),
        rr_ms: finite(rng),
        peak_count: rng.random(),
        sdnn_ms: finite(rng),
        rmssd_ms: finite(rng),
        pnn50_pct: rng.random_range(0.0..=100.0),
        heart_rate_bpm: finite(rng),
        window_s: finite(rng),
    }
}

/// A random message of the given schema that satisfies every invariant.
pub fn random_message(rng: &mut impl Rng, schema: SchemaId) -> Message {
    match schema {
        SchemaId::PhysioRaw => {
            let n_channels = rng.random_range(0..4);
            let n = rng.random_range(0..64);
            let channels = (0..n_channels)
                .map(|i| {
                    let name = format!("{}{i}", short_string(rng, 10));
                    PhysioRawChannel::new(name, (0..n).map(|_| finite(rng)).collect())
                })
                .collect();
            Message::PhysioRaw(PhysioRaw { header: header(rng), device_timestamp_ns: rng.random(), channels })
        }
        SchemaId::DeviceFeature => Message::DeviceFeature(DeviceFeature {
            header: header(rng),
            device_timestamp_ns: rng.random(),
            name: format!("f{}", short_string(rng, 20)),
            value: finite(rng),
        }),
        SchemaId::EcgFeatures => Message::EcgFeatures(hrv(rng)),
        SchemaId::PpgFeatures => Message::PpgFeatures(hrv(rng)),
        SchemaId::ExpressionEvent => Message::ExpressionEvent(ExpressionEvent {
            header: header(rng),
            human_id: short_string(rng, 20),
            expression: Expression::ALL[rng.random_range(0..Expression::ALL.len())],
            confidence: rng.random_range(0.0..=1.0),
        }),
        SchemaId::AffectiveState => Message::AffectiveState(AffectiveState {
            header: header(rng),
            human_id: short_string(rng, 20),
            state: AffectLabel::ALL[rng.random_range(0..AffectLabel::ALL.len())],
            heart_rate_bpm: finite(rng),
            expression: Expression::ALL[rng.random_range(0..Expression::ALL.len())],
        }),
        SchemaId::BeatTruth => Message::BeatTruth(BeatTruth { header: header(rng), beat_time_ns: rng.random() }),
    }
}

fn sample_header(seq: u64) -> Header {
    Header { seq, stamp_ns: 1_700_000_000_000_000_000, source: "sim".into() }
}

/// One fixed message per schema; their encodings are documented byte for
/// byte.
pub fn sample_message(schema: SchemaId) -> Message {
    let features = HrvFeatures {
        header: sample_header(3),
        device_timestamp_ns: 2_050_000_000,
        rr_ms: 812.5,
        peak_count: 74,
        sdnn_ms: 42.0,
        rmssd_ms: 31.5,
        pnn50_pct: 12.5,
        heart_rate_bpm: 72.0,
        window_s: 60.0,
    };
    match schema {
        SchemaId::PhysioRaw => Message::PhysioRaw(PhysioRaw {
            header: sample_header(1),
            device_timestamp_ns: 2_050_000_000,
            channels: vec![PhysioRawChannel::new("ecg_mv", vec![0.5, -0.25])],
        }),
        SchemaId::DeviceFeature => Message::DeviceFeature(DeviceFeature {
            header: sample_header(2),
            device_timestamp_ns: 2_050_000_000,
            name: "heart_rate_bpm".into(),
            value: 71.5,
        }),
        SchemaId::EcgFeatures => Message::EcgFeatures(features),
        SchemaId::PpgFeatures => Message::PpgFeatures(features),
        SchemaId::ExpressionEvent => Message::ExpressionEvent(ExpressionEvent {
            header: sample_header(4),
            human_id: "p1".into(),
            expression: Expression::Happy,
            confidence: 0.9,
        }),
        SchemaId::AffectiveState => Message::AffectiveState(AffectiveState {
            header: sample_header(5),
            human_id: "p1".into(),
            state: AffectLabel::CalmRelaxed,
            heart_rate_bpm: 74.0,
            expression: Expression::Happy,
        }),
        SchemaId::BeatTruth => {
            Message::BeatTruth(BeatTruth { header: sample_header(6), beat_time_ns: 1_700_000_000_416_000_000 })
        }
    }
}

/// Lowercase hex, 16 bytes per line, bytes separated by spaces.
pub fn hex_dump(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .map(|line| line.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses the output of [`hex_dump`] (any whitespace between bytes).
pub fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    text.split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).map_err(|e| format!("bad hex byte {b:?}: {e}")))
        .collect()
}
