//! Topic grammar: `/humans/physiological/<human_id>/<sensor_type>/<sensor_id>/<field>`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::InvariantViolation;

pub const MAX_TOKEN_LEN: usize = 64;

const ROOT: &str = "humans";
const PHYSIOLOGICAL: &str = "physiological";

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

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
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(()),
                }
            }
        }
    };
}

token_enum! {
    /// Sensor modalities known to the topic grammar.
    SensorType {
        Eeg => "eeg",
        Ppg => "ppg",
        Ecg => "ecg",
        Eda => "eda",
        Emg => "emg",
        EyeTracking => "eye_tracking",
        Eog => "eog",
        Pupillometry => "pupillometry",
        Respiration => "respiration",
    }
}

token_enum! {
    /// Last topic segment: which stream of a sensor.
    Field {
        Raw => "raw",
        Device => "device",
        Features => "features",
        Truth => "truth",
    }
}

/// Which part of a topic string failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicSegment {
    /// The string does not start with `/`.
    Leading,
    Humans,
    Physiological,
    HumanId,
    SensorType,
    SensorId,
    Field,
    /// Segments after `<field>`.
    Trailing,
    /// A segment of a non-physiological namespace.
    Namespace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid topic {topic:?}: {segment:?} segment {reason}")]
pub struct TopicError {
    pub topic: String,
    pub segment: TopicSegment,
    pub reason: String,
}

impl TopicError {
    fn new(topic: &str, segment: TopicSegment, reason: impl Into<String>) -> Self {
        Self { topic: topic.to_owned(), segment, reason: reason.into() }
    }
}

/// `[a-z0-9_]+`, 1 to 64 bytes.
pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_TOKEN_LEN
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

fn token_reason(s: &str) -> String {
    if s.is_empty() {
        "is empty".into()
    } else if s.len() > MAX_TOKEN_LEN {
        format!("is longer than {MAX_TOKEN_LEN} bytes")
    } else {
        format!("{s:?} is not a [a-z0-9_]+ token")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName {
    pub human_id: String,
    pub sensor_type: SensorType,
    pub sensor_id: String,
    pub field: Field,
}

impl TopicName {
    pub fn new(
        human_id: impl Into<String>,
        sensor_type: SensorType,
        sensor_id: impl Into<String>,
        field: Field,
    ) -> Result<Self, InvariantViolation> {
        let t = Self { human_id: human_id.into(), sensor_type, sensor_id: sensor_id.into(), field };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), InvariantViolation> {
        for (name, tok) in [("human_id", &self.human_id), ("sensor_id", &self.sensor_id)] {
            if !is_token(tok) {
                return Err(InvariantViolation(format!("{name} {}", token_reason(tok))));
            }
        }
        Ok(())
    }

    /// Same sensor, different field.
    pub fn with_field(&self, field: Field) -> Self {
        Self { field, ..self.clone() }
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "/{ROOT}/{PHYSIOLOGICAL}/{}/{}/{}/{}",
            self.human_id, self.sensor_type, self.sensor_id, self.field
        )
    }
}

impl FromStr for TopicName {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_topic(s)
    }
}

pub fn parse_topic(s: &str) -> Result<TopicName, TopicError> {
    use TopicSegment as Seg;

    let Some(rest) = s.strip_prefix('/') else {
        return Err(TopicError::new(s, Seg::Leading, "missing leading '/'"));
    };
    let parts: Vec<&str> = rest.split('/').collect();
    let order = [Seg::Humans, Seg::Physiological, Seg::HumanId, Seg::SensorType, Seg::SensorId, Seg::Field];
    if parts.len() < order.len() {
        let missing = order[parts.len()];
        // A shorter string may still fail earlier; report the first bad segment.
        for (i, part) in parts.iter().enumerate() {
            check_segment(s, order[i], part)?;
        }
        return Err(TopicError::new(s, missing, "is missing"));
    }
    if parts.len() > order.len() {
        for (i, part) in parts.iter().take(order.len()).enumerate() {
            check_segment(s, order[i], part)?;
        }
        return Err(TopicError::new(s, Seg::Trailing, "unexpected extra segments"));
    }
    for (i, part) in parts.iter().enumerate() {
        check_segment(s, order[i], part)?;
    }
    Ok(TopicName {
        human_id: parts[2].to_owned(),
        sensor_type: parts[3].parse().expect("checked"),
        sensor_id: parts[4].to_owned(),
        field: parts[5].parse().expect("checked"),
    })
}

fn check_segment(topic: &str, seg: TopicSegment, part: &str) -> Result<(), TopicError> {
    use TopicSegment as Seg;
    match seg {
        Seg::Humans if part != ROOT => Err(TopicError::new(topic, seg, format!("must be {ROOT:?}"))),
        Seg::Physiological if part != PHYSIOLOGICAL => {
            Err(TopicError::new(topic, seg, format!("must be {PHYSIOLOGICAL:?}")))
        }
        Seg::HumanId | Seg::SensorId if !is_token(part) => {
            Err(TopicError::new(topic, seg, token_reason(part)))
        }
        Seg::SensorType if part.parse::<SensorType>().is_err() => {
            Err(TopicError::new(topic, seg, format!("{part:?} is not a known sensor type")))
        }
        Seg::Field if part.parse::<Field>().is_err() => {
            Err(TopicError::new(topic, seg, format!("{part:?} is not one of raw, device, features, truth")))
        }
        _ => Ok(()),
    }
}

pub fn format_topic(t: &TopicName) -> Result<String, InvariantViolation> {
    t.validate()?;
    Ok(t.to_string())
}

/// Namespaces outside the physiological grammar that may carry messages.
const EXTRA_NAMESPACES: &[&[&str]] = &[&["humans", "expressions"], &["humans", "affective_state"]];
const EXPERIMENT_EVENTS: &str = "/experiment/events";

/// Validates a publishable topic: either the physiological grammar or one of
/// `/humans/expressions/<token>...`, `/humans/affective_state/<token>...`
/// and `/experiment/events`.
pub fn validate_topic(s: &str) -> Result<(), TopicError> {
    if s == EXPERIMENT_EVENTS {
        return Ok(());
    }
    let Some(rest) = s.strip_prefix('/') else {
        return Err(TopicError::new(s, TopicSegment::Leading, "missing leading '/'"));
    };
    let parts: Vec<&str> = rest.split('/').collect();
    for ns in EXTRA_NAMESPACES {
        if parts.len() > ns.len() && parts[..ns.len()] == ns[..] {
            return match parts[ns.len()..].iter().find(|p| !is_token(p)) {
                Some(bad) => Err(TopicError::new(s, TopicSegment::Namespace, token_reason(bad))),
                None => Ok(()),
            };
        }
    }
    parse_topic(s).map(|_| ())
}
