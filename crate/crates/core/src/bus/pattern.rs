use std::fmt;
use std::str::FromStr;

use crate::msgmodel::{topic_is_token, validate_topic};

use super::BusError;

/// Subscription filter: an exact topic, or `<prefix>/**` matching every
/// topic strictly below `<prefix>`. `/**` matches everything.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TopicPattern {
    Exact(String),
    Prefix(Vec<String>),
}

impl TopicPattern {
    pub fn parse(s: &str) -> Result<Self, BusError> {
        let invalid = |why: &str| BusError::InvalidPattern(format!("{s:?}: {why}"));
        if let Some(prefix) = s.strip_suffix("/**") {
            if prefix.is_empty() {
                return Ok(TopicPattern::Prefix(Vec::new()));
            }
            let rest = prefix.strip_prefix('/').ok_or_else(|| invalid("missing leading '/'"))?;
            let segments: Vec<String> = rest.split('/').map(str::to_owned).collect();
            if let Some(bad) = segments.iter().find(|seg| !topic_is_token(seg)) {
                return Err(invalid(&format!("segment {bad:?} is not a token")));
            }
            Ok(TopicPattern::Prefix(segments))
        } else if s.contains('*') {
            Err(invalid("'**' is only allowed as the final segment"))
        } else {
            validate_topic(s).map_err(|e| invalid(&e.to_string()))?;
            Ok(TopicPattern::Exact(s.to_owned()))
        }
    }

    pub fn matches(&self, topic: &str) -> bool {
        match self {
            TopicPattern::Exact(t) => t == topic,
            TopicPattern::Prefix(prefix) => {
                let Some(rest) = topic.strip_prefix('/') else {
                    return false;
                };
                let mut parts = rest.split('/');
                prefix.iter().all(|p| parts.next() == Some(p.as_str())) && parts.next().is_some()
            }
        }
    }
}

impl FromStr for TopicPattern {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopicPattern::Exact(t) => f.write_str(t),
            TopicPattern::Prefix(segs) => {
                for s in segs {
                    write!(f, "/{s}")?;
                }
                f.write_str("/**")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ECG_RAW: &str = "/humans/physiological/p1/ecg/h10/raw";
    const ECG_FEATURES: &str = "/humans/physiological/p1/ecg/h10/features";
    const P2_RAW: &str = "/humans/physiological/p2/ecg/h10/raw";

    #[test]
    fn exact_matches_only_itself() {
        let p = TopicPattern::parse(ECG_RAW).unwrap();
        assert!(p.matches(ECG_RAW));
        assert!(!p.matches(ECG_FEATURES));
    }

    #[test]
    fn prefix_matches_subtree() {
        let p = TopicPattern::parse("/humans/physiological/p1/**").unwrap();
        assert!(p.matches(ECG_RAW));
        assert!(p.matches(ECG_FEATURES));
        assert!(!p.matches(P2_RAW));
        // Segment boundaries are respected.
        let p = TopicPattern::parse("/humans/physiological/p/**").unwrap();
        assert!(!p.matches(ECG_RAW));
    }

    #[test]
    fn prefix_does_not_match_itself() {
        let p = TopicPattern::parse("/experiment/**").unwrap();
        assert!(p.matches("/experiment/events"));
        let p = TopicPattern::parse("/experiment/events/**").unwrap();
        assert!(!p.matches("/experiment/events"));
    }

    #[test]
    fn match_all() {
        let p = TopicPattern::parse("/**").unwrap();
        assert!(p.matches(ECG_RAW));
        assert!(p.matches("/experiment/events"));
    }

    #[test]
    fn invalid_patterns() {
        for s in ["humans/**", "", "/humans/*", "/Humans/**", "/humans//**", "/humans/**/raw", "/foo/bar"] {
            assert!(TopicPattern::parse(s).is_err(), "{s}");
        }
    }

    #[test]
    fn display_round_trip() {
        for s in ["/**", "/humans/physiological/p1/**", ECG_RAW] {
            assert_eq!(TopicPattern::parse(s).unwrap().to_string(), s);
        }
    }
}
