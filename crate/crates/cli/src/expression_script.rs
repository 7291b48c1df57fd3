//! A node that plays back a scripted facial-expression timeline, standing in
//! for a camera-based expression recogniser.

use std::sync::atomic::Ordering;

use log::warn;
use physiobus::bus::BusError;
use physiobus::msgmodel::{topic_is_token, Expression, ExpressionEvent};
use physiobus::{Bus, RunningNode};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

fn default_republish_s() -> f64 {
    0.5
}
fn default_confidence() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionScriptConfig {
    /// `(t_s, expression)` pairs; `t_s` counts from node start. Each
    /// expression holds until the next entry.
    pub timeline: Vec<(f64, String)>,
    /// Interval between repeated publications of the current expression.
    #[serde(default = "default_republish_s")]
    pub republish_s: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Restart the timeline after its last entry, with period `loop_s`.
    #[serde(default)]
    pub loop_s: Option<f64>,
}

impl ExpressionScriptConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.parsed_timeline().map(|_| ())
    }

    fn parsed_timeline(&self) -> Result<Vec<(i64, Expression)>, String> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.timeline.is_empty() {
            return Err("timeline is empty".into());
        }
        if !positive(self.republish_s) {
            return Err(format!("republish_s {} must be > 0", self.republish_s));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        let mut out = Vec::with_capacity(self.timeline.len());
        for (t, e) in &self.timeline {
            if !(t.is_finite() && *t >= 0.0) {
                return Err(format!("timeline time {t} must be >= 0"));
            }
            let expr = e.parse::<Expression>().map_err(|_| format!("unknown expression {e:?}"))?;
            let t_ns = (t * 1e9).round() as i64;
            if out.last().is_some_and(|(prev, _)| *prev > t_ns) {
                return Err("timeline times must not decrease".into());
            }
            out.push((t_ns, expr));
        }
        if let Some(l) = self.loop_s {
            let last = out.last().expect("non-empty").0;
            if !positive(l) || (l * 1e9) as i64 <= last {
                return Err(format!("loop_s {l} must exceed the last timeline time"));
            }
        }
        Ok(out)
    }
}

/// Expression in effect `elapsed_ns` after start, if the timeline has begun.
fn current(timeline: &[(i64, Expression)], loop_ns: Option<i64>, elapsed_ns: i64) -> Option<Expression> {
    let t = match loop_ns {
        Some(p) if elapsed_ns >= p => elapsed_ns % p,
        _ => elapsed_ns,
    };
    // After the first loop the last entry carries over until the first one.
    let wrapped = loop_ns.is_some_and(|p| elapsed_ns >= p);
    match timeline.iter().rev().find(|(start, _)| *start <= t) {
        Some((_, e)) => Some(*e),
        None if wrapped => timeline.last().map(|(_, e)| *e),
        None => None,
    }
}

/// Starts the script node publishing on `/humans/expressions/<human_id>`.
/// The default node name is `expression_script_<human_id>`.
pub fn run_expression_script(
    bus: &dyn Bus,
    human_id: &str,
    config: &ExpressionScriptConfig,
    node_name: Option<&str>,
) -> Result<RunningNode, ScriptError> {
    if !topic_is_token(human_id) {
        return Err(ScriptError::InvalidConfig(format!("human_id {human_id:?} is not a topic token")));
    }
    let timeline = config.parsed_timeline().map_err(ScriptError::InvalidConfig)?;
    let default_name = format!("expression_script_{human_id}");
    let params = vec![
        ("human_id".into(), human_id.into()),
        ("republish_s".into(), config.republish_s.into()),
        ("timeline_len".into(), (timeline.len() as i64).into()),
    ];
    let node = bus.create_node(node_name.unwrap_or(&default_name), params)?;
    let topic = format!("/humans/expressions/{human_id}");
    let human_id = human_id.to_owned();
    let confidence = config.confidence;
    let period_ns = (config.republish_s * 1e9).round() as i64;
    let loop_ns = config.loop_s.map(|l| (l * 1e9).round() as i64);

    let mut running = RunningNode::new(node.name().to_owned());
    let stop = running.stop_flag();
    running.spawn("script", move || {
        let clock = node.clock();
        let t0 = clock.now_ns();
        let mut next = t0;
        let mut published: i64 = 0;
        while !stop.load(Ordering::Acquire) {
            if let Some(expression) = current(&timeline, loop_ns, next - t0) {
                let event = ExpressionEvent { header: Default::default(), human_id: human_id.clone(), expression, confidence };
                match node.publish(&topic, event) {
                    Ok(_) => published += 1,
                    Err(e) => warn!("{}: publish failed: {e}", node.name()),
                }
                node.set_status("published", published);
            }
            next += period_ns;
            if !clock.sleep_until(next, &stop) {
                break;
            }
        }
    });
    Ok(running)
}
