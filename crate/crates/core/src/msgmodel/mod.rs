//! Message types carried on the bus, their binary envelope encoding, the
//! topic grammar and the modality registry.

mod codec;
pub mod json;
mod registry;
mod topic;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use codec::{decode_envelope, encode_envelope, peek_schema_id, DecodeError};
pub use registry::{modality_indicators, Indicator, UnknownModality};
pub use topic::{
    format_topic, parse_topic, validate_topic, Field, SensorType, TopicError, TopicName,
    TopicSegment, MAX_TOKEN_LEN,
};
pub use topic::is_token as topic_is_token;

/// Longest encodable `Header::source` and `PhysioRawChannel::channel_name`.
pub const MAX_SHORT_STRING: usize = 255;
/// Most channels a single `PhysioRaw` may carry.
pub const MAX_CHANNELS: usize = u16::MAX as usize;

/// A message violates one of its type invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invariant violation: {0}")]
pub struct InvariantViolation(pub String);

fn violation<T>(msg: impl Into<String>) -> Result<T, InvariantViolation> {
    Err(InvariantViolation(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Header {
    pub seq: u64,
    /// Publisher wall clock, nanoseconds since the Unix epoch.
    pub stamp_ns: i64,
    pub source: String,
}

impl Header {
    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.stamp_ns < 0 {
            return violation(format!("header stamp_ns {} is negative", self.stamp_ns));
        }
        if self.source.len() > MAX_SHORT_STRING {
            return violation(format!("header source is {} bytes", self.source.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhysioRawChannel {
    pub channel_name: String,
    pub samples: Vec<f64>,
}

impl PhysioRawChannel {
    pub fn new(channel_name: impl Into<String>, samples: Vec<f64>) -> Self {
        Self { channel_name: channel_name.into(), samples }
    }
}

/// One block of raw samples. `device_timestamp_ns` is the device-clock time
/// of the first sample in the block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhysioRaw {
    pub header: Header,
    pub device_timestamp_ns: i64,
    pub channels: Vec<PhysioRawChannel>,
}

impl PhysioRaw {
    pub fn channel(&self, name: &str) -> Option<&PhysioRawChannel> {
        self.channels.iter().find(|c| c.channel_name == name)
    }

    /// Samples per channel, 0 for an empty message.
    pub fn block_len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        self.header.validate()?;
        if self.channels.len() > MAX_CHANNELS {
            return violation(format!("{} channels exceed the limit", self.channels.len()));
        }
        let expected = self.block_len();
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.channel_name.is_empty() {
                return violation(format!("channel {i} has an empty name"));
            }
            if ch.channel_name.len() > MAX_SHORT_STRING {
                return violation(format!("channel {i} name is {} bytes", ch.channel_name.len()));
            }
            if self.channels[..i].iter().any(|c| c.channel_name == ch.channel_name) {
                return violation(format!("duplicate channel name {:?}", ch.channel_name));
            }
            if ch.samples.len() != expected {
                return violation(format!(
                    "channel {:?} has {} samples, expected {expected}",
                    ch.channel_name,
                    ch.samples.len()
                ));
            }
            if ch.samples.len() > u32::MAX as usize {
                return violation("sample count exceeds u32");
            }
            if let Some(j) = ch.samples.iter().position(|v| !v.is_finite()) {
                return violation(format!(
                    "channel {:?} sample {j} is not finite",
                    ch.channel_name
                ));
            }
        }
        Ok(())
    }
}

/// A feature value reported by the device itself (e.g. its own RR estimate).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceFeature {
    pub header: Header,
    pub device_timestamp_ns: i64,
    pub name: String,
    pub value: f64,
}

impl DeviceFeature {
    fn validate(&self) -> Result<(), InvariantViolation> {
        self.header.validate()?;
        if self.name.is_empty() {
            return violation("device feature name is empty");
        }
        check_string_len("device feature name", &self.name)?;
        check_finite("device feature value", self.value)
    }
}

/// Heart-rate-variability features derived from a beat stream. The ECG and
/// PPG feature messages share this shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HrvFeatures {
    pub header: Header,
    pub device_timestamp_ns: i64,
    /// Latest RR interval.
    pub rr_ms: f64,
    /// Beats detected inside the analysis window.
    pub peak_count: u32,
    pub sdnn_ms: f64,
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
    pub heart_rate_bpm: f64,
    pub window_s: f64,
}

impl HrvFeatures {
    fn validate(&self) -> Result<(), InvariantViolation> {
        self.header.validate()?;
        for (name, v) in [
            ("rr_ms", self.rr_ms),
            ("sdnn_ms", self.sdnn_ms),
            ("rmssd_ms", self.rmssd_ms),
            ("pnn50_pct", self.pnn50_pct),
            ("heart_rate_bpm", self.heart_rate_bpm),
            ("window_s", self.window_s),
        ] {
            check_finite(name, v)?;
        }
        if !(0.0..=100.0).contains(&self.pnn50_pct) {
            return violation(format!("pnn50_pct {} outside [0, 100]", self.pnn50_pct));
        }
        Ok(())
    }
}

macro_rules! wire_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $code:literal => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> u8 {
                match self {
                    $($name::$variant => $code),+
                }
            }

            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($name))),
                }
            }
        }
    };
}

wire_enum! {
    /// Facial expression label from the expression recognizer.
    Expression {
        Neutral = 0 => "neutral",
        Happy = 1 => "happy",
        Sad = 2 => "sad",
        Angry = 3 => "angry",
        Fear = 4 => "fear",
        Disgust = 5 => "disgust",
        Surprise = 6 => "surprise",
    }
}

wire_enum! {
    /// Output label of the affective-state fusion.
    AffectLabel {
        CalmRelaxed = 0 => "calm_relaxed",
        AlertActive = 1 => "alert_active",
        StressedAnxious = 2 => "stressed_anxious",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionEvent {
    pub header: Header,
    pub human_id: String,
    pub expression: Expression,
    pub confidence: f64,
}

impl ExpressionEvent {
    fn validate(&self) -> Result<(), InvariantViolation> {
        self.header.validate()?;
        check_string_len("human_id", &self.human_id)?;
        if !(0.0..=1.0).contains(&self.confidence) {
            return violation(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffectiveState {
    pub header: Header,
    pub human_id: String,
    pub state: AffectLabel,
    /// Heart rate the decision was taken on.
    pub heart_rate_bpm: f64,
    pub expression: Expression,
}

impl AffectiveState {
    fn validate(&self) -> Result<(), InvariantViolation> {
        self.header.validate()?;
        check_string_len("human_id", &self.human_id)?;
        check_finite("heart_rate_bpm", self.heart_rate_bpm)
    }
}

/// Simulator ground truth: bus time of one true R peak.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeatTruth {
    pub header: Header,
    pub beat_time_ns: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u16)]
pub enum SchemaId {
    PhysioRaw = 1,
    DeviceFeature = 2,
    EcgFeatures = 3,
    PpgFeatures = 4,
    ExpressionEvent = 5,
    AffectiveState = 6,
    BeatTruth = 7,
}

impl SchemaId {
    pub const ALL: [SchemaId; 7] = [
        SchemaId::PhysioRaw,
        SchemaId::DeviceFeature,
        SchemaId::EcgFeatures,
        SchemaId::PpgFeatures,
        SchemaId::ExpressionEvent,
        SchemaId::AffectiveState,
        SchemaId::BeatTruth,
    ];

    pub fn from_u16(v: u16) -> Option<Self> {
        Self::ALL.iter().copied().find(|s| *s as u16 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemaId::PhysioRaw => "PhysioRaw",
            SchemaId::DeviceFeature => "DeviceFeature",
            SchemaId::EcgFeatures => "EcgFeatures",
            SchemaId::PpgFeatures => "PpgFeatures",
            SchemaId::ExpressionEvent => "ExpressionEvent",
            SchemaId::AffectiveState => "AffectiveState",
            SchemaId::BeatTruth => "BeatTruth",
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Any message that can travel inside an envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    PhysioRaw(PhysioRaw),
    DeviceFeature(DeviceFeature),
    EcgFeatures(HrvFeatures),
    PpgFeatures(HrvFeatures),
    ExpressionEvent(ExpressionEvent),
    AffectiveState(AffectiveState),
    BeatTruth(BeatTruth),
}

impl Message {
    pub fn schema_id(&self) -> SchemaId {
        match self {
            Message::PhysioRaw(_) => SchemaId::PhysioRaw,
            Message::DeviceFeature(_) => SchemaId::DeviceFeature,
            Message::EcgFeatures(_) => SchemaId::EcgFeatures,
            Message::PpgFeatures(_) => SchemaId::PpgFeatures,
            Message::ExpressionEvent(_) => SchemaId::ExpressionEvent,
            Message::AffectiveState(_) => SchemaId::AffectiveState,
            Message::BeatTruth(_) => SchemaId::BeatTruth,
        }
    }

    pub fn header(&self) -> &Header {
        match self {
            Message::PhysioRaw(m) => &m.header,
            Message::DeviceFeature(m) => &m.header,
            Message::EcgFeatures(m) | Message::PpgFeatures(m) => &m.header,
            Message::ExpressionEvent(m) => &m.header,
            Message::AffectiveState(m) => &m.header,
            Message::BeatTruth(m) => &m.header,
        }
    }

    pub fn header_mut(&mut self) -> &mut Header {
        match self {
            Message::PhysioRaw(m) => &mut m.header,
            Message::DeviceFeature(m) => &mut m.header,
            Message::EcgFeatures(m) | Message::PpgFeatures(m) => &mut m.header,
            Message::ExpressionEvent(m) => &mut m.header,
            Message::AffectiveState(m) => &mut m.header,
            Message::BeatTruth(m) => &mut m.header,
        }
    }

    /// Device-clock timestamp, for the schemas that carry one.
    pub fn device_timestamp_ns(&self) -> Option<i64> {
        match self {
            Message::PhysioRaw(m) => Some(m.device_timestamp_ns),
            Message::DeviceFeature(m) => Some(m.device_timestamp_ns),
            Message::EcgFeatures(m) | Message::PpgFeatures(m) => Some(m.device_timestamp_ns),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        match self {
            Message::PhysioRaw(m) => m.validate(),
            Message::DeviceFeature(m) => m.validate(),
            Message::EcgFeatures(m) | Message::PpgFeatures(m) => m.validate(),
            Message::ExpressionEvent(m) => m.validate(),
            Message::AffectiveState(m) => m.validate(),
            Message::BeatTruth(m) => m.header.validate(),
        }
    }
}

macro_rules! impl_from {
    ($($ty:ident),+) => {
        $(impl From<$ty> for Message {
            fn from(m: $ty) -> Self {
                Message::$ty(m)
            }
        })+
    };
}

impl_from!(PhysioRaw, DeviceFeature, ExpressionEvent, AffectiveState, BeatTruth);

fn check_finite(name: &str, v: f64) -> Result<(), InvariantViolation> {
    if v.is_finite() {
        Ok(())
    } else {
        violation(format!("{name} is not finite ({v})"))
    }
}

fn check_string_len(name: &str, s: &str) -> Result<(), InvariantViolation> {
    if s.len() > u16::MAX as usize {
        violation(format!("{name} is {} bytes", s.len()))
    } else {
        Ok(())
    }
}
