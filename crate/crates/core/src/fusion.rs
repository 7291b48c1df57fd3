//! Decision-tree estimate of a person's affective state from their facial
//! expression and heart rate.

use std::sync::{Arc, Mutex};

use log::{debug, warn};
use serde::Deserialize;
use thiserror::Error;

use crate::bus::{BusError, Delivery, ParameterValue, TopicPattern};
use crate::msgmodel::{topic_is_token, AffectLabel, AffectiveState, Expression, Message};
use crate::runtime::{Bus, RunningNode};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

fn default_threshold() -> f64 {
    90.0
}
fn default_staleness() -> f64 {
    5.0
}
fn default_publish_hz() -> f64 {
    1.0
}

/// Input topics may be exact topics or `/**` patterns. By default the node
/// listens to every ECG and PPG stream of the person and to
/// `/humans/expressions/<human_id>`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub human_id: String,
    #[serde(default = "default_threshold")]
    pub hr_threshold_bpm: f64,
    #[serde(default = "default_staleness")]
    pub staleness_s: f64,
    #[serde(default = "default_publish_hz")]
    pub publish_hz: f64,
    #[serde(default)]
    pub ecg_features_topic: Option<String>,
    #[serde(default)]
    pub ppg_features_topic: Option<String>,
    #[serde(default)]
    pub expression_topic: Option<String>,
}

impl FusionConfig {
    pub fn new(human_id: impl Into<String>) -> Self {
        Self {
            human_id: human_id.into(),
            hr_threshold_bpm: default_threshold(),
            staleness_s: default_staleness(),
            publish_hz: default_publish_hz(),
            ecg_features_topic: None,
            ppg_features_topic: None,
            expression_topic: None,
        }
    }

    pub fn ecg_topic(&self) -> String {
        self.ecg_features_topic
            .clone()
            .unwrap_or_else(|| format!("/humans/physiological/{}/ecg/**", self.human_id))
    }

    pub fn ppg_topic(&self) -> String {
        self.ppg_features_topic
            .clone()
            .unwrap_or_else(|| format!("/humans/physiological/{}/ppg/**", self.human_id))
    }

    pub fn expressions_topic(&self) -> String {
        self.expression_topic.clone().unwrap_or_else(|| format!("/humans/expressions/{}", self.human_id))
    }

    pub fn output_topic(&self) -> String {
        format!("/humans/affective_state/{}", self.human_id)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidConfig(m));
        if !topic_is_token(&self.human_id) {
            return bad(format!("human_id {:?} is not a topic token", self.human_id));
        }
        for (name, v) in [
            ("hr_threshold_bpm", self.hr_threshold_bpm),
            ("staleness_s", self.staleness_s),
            ("publish_hz", self.publish_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} {v} must be > 0"));
            }
        }
        for t in [self.ecg_topic(), self.ppg_topic(), self.expressions_topic()] {
            TopicPattern::parse(&t).map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }
}

/// Expressions read as positive (otherwise negative) by the decision tree.
pub fn is_positive(expression: Expression) -> bool {
    matches!(expression, Expression::Happy | Expression::Neutral | Expression::Surprise)
}

/// Positive expressions map to calm below the threshold and alert at or
/// above it; negative ones to alert below and stressed at or above.
pub fn classify(expression: Expression, hr_bpm: f64, config: &FusionConfig) -> AffectLabel {
    let high = hr_bpm >= config.hr_threshold_bpm;
    match (is_positive(expression), high) {
        (true, false) => AffectLabel::CalmRelaxed,
        (true, true) | (false, false) => AffectLabel::AlertActive,
        (false, true) => AffectLabel::StressedAnxious,
    }
}

/// A value with the bus time it was received.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading<T> {
    pub value: T,
    pub recv_ns: i64,
}

impl<T: Copy> Reading<T> {
    fn fresh(self, now_ns: i64, staleness_s: f64) -> Option<T> {
        ((now_ns - self.recv_ns) as f64 <= staleness_s * 1e9).then_some(self.value)
    }
}

/// Mean of the heart rates no older than `staleness_s`.
pub fn fuse_hr(
    ecg: Option<Reading<f64>>,
    ppg: Option<Reading<f64>>,
    now_ns: i64,
    staleness_s: f64,
) -> Option<f64> {
    let fresh: Vec<f64> = [ecg, ppg].into_iter().flatten().filter_map(|r| r.fresh(now_ns, staleness_s)).collect();
    match fresh.as_slice() {
        [] => None,
        [one] => Some(*one),
        [a, b] => Some((a + b) / 2.0),
        _ => unreachable!("two inputs"),
    }
}

#[derive(Debug, Default)]
struct Inputs {
    ecg: Option<Reading<f64>>,
    ppg: Option<Reading<f64>>,
    expression: Option<Reading<Expression>>,
}

/// Starts the fusion node; it publishes on `/humans/affective_state/<human_id>`.
pub fn run_fusion_node(bus: &dyn Bus, config: &FusionConfig, node_name: Option<&str>) -> Result<RunningNode, FusionError> {
    config.validate()?;
    let params: Vec<(String, ParameterValue)> = vec![
        ("human_id".into(), config.human_id.as_str().into()),
        ("hr_threshold_bpm".into(), config.hr_threshold_bpm.into()),
        ("staleness_s".into(), config.staleness_s.into()),
        ("publish_hz".into(), config.publish_hz.into()),
        ("ecg_features_topic".into(), config.ecg_topic().into()),
        ("ppg_features_topic".into(), config.ppg_topic().into()),
        ("expression_topic".into(), config.expressions_topic().into()),
    ];
    let default_name = format!("fusion_{}", config.human_id);
    let node = bus.create_node(node_name.unwrap_or(&default_name), params)?;
    let inputs = Arc::new(Mutex::new(Inputs::default()));
    let mut running = RunningNode::new(node.name().to_owned());

    let name = node.name().to_owned();
    let on_input = {
        let inputs = Arc::clone(&inputs);
        move |d: &Delivery| {
            let msg = match d.decode() {
                Ok(m) => m,
                Err(e) => {
                    warn!("{name}: undecodable message on {}: {e}", d.topic);
                    return;
                }
            };
            let mut i = inputs.lock().unwrap();
            let recv_ns = d.recv_time_ns;
            match msg {
                Message::EcgFeatures(f) => i.ecg = Some(Reading { value: f.heart_rate_bpm, recv_ns }),
                Message::PpgFeatures(f) => i.ppg = Some(Reading { value: f.heart_rate_bpm, recv_ns }),
                Message::ExpressionEvent(e) => i.expression = Some(Reading { value: e.expression, recv_ns }),
                other => debug!("{name}: ignoring {} on {}", other.schema_id().name(), d.topic),
            }
        }
    };
    let sub = node.subscribe_many(&[config.ecg_topic(), config.ppg_topic(), config.expressions_topic()], on_input)?;
    running.hold(sub);

    let stop = running.stop_flag();
    let config = config.clone();
    let period_ns = (1e9 / config.publish_hz).round() as i64;
    running.spawn("publish", move || {
        let clock = node.clock();
        let output = config.output_topic();
        let mut skipped: u64 = 0;
        let mut next = clock.now_ns() + period_ns;
        node.set_status("skipped_ticks", 0i64);
        while clock.sleep_until(next, &stop) {
            next += period_ns;
            let now = clock.now_ns();
            let (hr, expression) = {
                let i = inputs.lock().unwrap();
                (
                    fuse_hr(i.ecg, i.ppg, now, config.staleness_s),
                    i.expression.and_then(|e| e.fresh(now, config.staleness_s)),
                )
            };
            let (Some(hr), Some(expression)) = (hr, expression) else {
                skipped += 1;
                node.set_status("skipped_ticks", skipped as i64);
                continue;
            };
            let state = AffectiveState {
                header: Default::default(),
                human_id: config.human_id.clone(),
                state: classify(expression, hr, &config),
                heart_rate_bpm: hr,
                expression,
            };
            if let Err(e) = node.publish(&output, state) {
                warn!("{}: publish failed: {e}", node.name());
            }
        }
    });
    Ok(running)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(value: f64, recv_ns: i64) -> Option<Reading<f64>> {
        Some(Reading { value, recv_ns })
    }

    #[test]
    fn decision_table_examples() {
        let c = FusionConfig::new("p1");
        assert_eq!(classify(Expression::Happy, 65.0, &c), AffectLabel::CalmRelaxed);
        assert_eq!(classify(Expression::Neutral, 100.0, &c), AffectLabel::AlertActive);
        assert_eq!(classify(Expression::Fear, 130.0, &c), AffectLabel::StressedAnxious);
        assert_eq!(classify(Expression::Happy, 90.0, &c), AffectLabel::AlertActive);
        assert_eq!(classify(Expression::Sad, 89.999, &c), AffectLabel::AlertActive);
    }

    #[test]
    fn fused_heart_rate() {
        let s = 1_000_000_000;
        assert_eq!(fuse_hr(r(72.0, 0), r(76.0, 0), s, 5.0), Some(74.0));
        assert_eq!(fuse_hr(r(72.0, 9 * s), r(76.0, 0), 10 * s, 5.0), Some(72.0));
        assert_eq!(fuse_hr(r(72.0, 0), r(76.0, 0), 10 * s, 5.0), None);
        assert_eq!(fuse_hr(None, None, 0, 5.0), None);
        // Exactly at the staleness limit still counts as fresh.
        assert_eq!(fuse_hr(None, r(80.0, 0), 5 * s, 5.0), Some(80.0));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: FusionConfig = serde_json::from_str(r#"{"human_id":"p1"}"#).unwrap();
        assert_eq!(c, FusionConfig::new("p1"));
        assert_eq!(c.output_topic(), "/humans/affective_state/p1");
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.staleness_s = 0.0;
        assert!(bad.validate().is_err());
        bad = c.clone();
        bad.human_id = "P 1".into();
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<FusionConfig>(r#"{"human_id":"p1","x":1}"#).is_err());
    }
}
