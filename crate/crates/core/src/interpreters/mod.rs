//! Interpreter nodes: turn raw ECG/PPG blocks into beat-to-beat features.

mod detector;
pub mod hrv;

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use log::{debug, info, warn};
use serde::Deserialize;
use thiserror::Error;

use crate::bus::{BusError, Delivery, NodeHandle, ParameterValue};
use crate::msgmodel::{Field, HrvFeatures, Message, PhysioRaw, SensorType, TopicName};
use crate::runtime::{Bus, RunningNode};
use crate::timesync::OffsetEstimator;

pub use detector::{detect_r_peaks, DetectorConfig, PeakDetector};
pub use hrv::{
    compute_hr, compute_pnn50, compute_rmssd, compute_sdnn, feature_discrepancy, rr_from_peaks,
    summarize, Discrepancy, HrvError, HrvSummary, RrSeries, RrWindow,
};

/// Name of the device feature compared against the computed heart rate.
pub const DEVICE_HR_FEATURE: &str = "heart_rate_bpm";

#[derive(Debug, Error)]
pub enum InterpreterError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

fn default_window_s() -> f64 {
    60.0
}
fn default_publish_hz() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpreterConfig {
    /// Trailing analysis window.
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    #[serde(default = "default_publish_hz")]
    pub publish_hz: f64,
    /// Overrides the rate advertised by the driver.
    #[serde(default)]
    pub sampling_frequency_hz: Option<f64>,
    /// Channel to analyse; the first channel of each block by default.
    #[serde(default)]
    pub channel: Option<String>,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self {
            window_s: default_window_s(),
            publish_hz: default_publish_hz(),
            sampling_frequency_hz: None,
            channel: None,
        }
    }
}

impl InterpreterConfig {
    pub fn validate(&self) -> Result<(), InterpreterError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.window_s) {
            return Err(InterpreterError::InvalidConfig(format!("window_s {} must be > 0", self.window_s)));
        }
        if !positive(self.publish_hz) {
            return Err(InterpreterError::InvalidConfig(format!("publish_hz {} must be > 0", self.publish_hz)));
        }
        if let Some(fs) = self.sampling_frequency_hz.filter(|fs| !positive(*fs)) {
            return Err(InterpreterError::InvalidConfig(format!("sampling_frequency_hz {fs} must be > 0")));
        }
        Ok(())
    }
}

/// Where the sampling rate of a raw stream comes from.
#[derive(Debug)]
enum RateSource {
    Fixed(f64),
    /// Ask the publisher, falling back to the spacing of the first blocks.
    Discover { asked: HashMap<String, Option<f64>>, previous: Option<(i64, usize)> },
}

struct State {
    node: NodeHandle,
    detector_config: DetectorConfig,
    channel: Option<String>,
    rate: RateSource,
    detector: Option<PeakDetector>,
    window: RrWindow,
    offset: OffsetEstimator,
    peaks_detected: u64,
    last_raw_recv_ns: Option<i64>,
    /// Device-reported heart rates `(device time, bpm)` inside the window.
    device_hr: VecDeque<(i64, f64)>,
}

impl State {
    fn sampling_rate(&mut self, d: &Delivery, raw: &PhysioRaw, n: usize) -> Option<f64> {
        match &mut self.rate {
            RateSource::Fixed(fs) => Some(*fs),
            RateSource::Discover { asked, previous } => {
                if !d.publisher.is_empty() {
                    let node = &self.node;
                    let advertised = *asked.entry(d.publisher.to_string()).or_insert_with(|| {
                        node.get_parameter(&d.publisher, "sampling_frequency_hz")
                            .ok()
                            .flatten()
                            .and_then(|v| v.as_f64())
                            .filter(|fs| fs.is_finite() && *fs > 0.0)
                    });
                    if let Some(fs) = advertised {
                        self.rate = RateSource::Fixed(fs);
                        return Some(fs);
                    }
                }
                let current = (raw.device_timestamp_ns, n);
                let inferred = previous.and_then(|(t, len)| {
                    let dt = raw.device_timestamp_ns - t;
                    (dt > 0 && len > 0).then(|| len as f64 * 1e9 / dt as f64)
                });
                *previous = Some(current);
                if let Some(fs) = inferred {
                    info!("{}: inferred sampling rate {fs:.3} Hz from block spacing", self.node.name());
                    self.rate = RateSource::Fixed(fs);
                }
                inferred
            }
        }
    }

    fn on_raw(&mut self, d: &Delivery) {
        let raw = match d.decode() {
            Ok(Message::PhysioRaw(raw)) => raw,
            Ok(other) => {
                debug!("{}: ignoring {:?} on {}", self.node.name(), other.schema_id(), d.topic);
                return;
            }
            Err(e) => {
                warn!("{}: undecodable message on {}: {e}", self.node.name(), d.topic);
                return;
            }
        };
        let channel = match &self.channel {
            Some(name) => raw.channel(name),
            None => raw.channels.first(),
        };
        let Some(channel) = channel else { return };
        let samples = channel.samples.clone();
        if samples.is_empty() {
            return;
        }
        self.last_raw_recv_ns = Some(d.recv_time_ns);
        let Some(fs) = self.sampling_rate(d, &raw, samples.len()) else { return };
        let block_end = raw.device_timestamp_ns + (samples.len() as f64 * 1e9 / fs).round() as i64;
        self.offset.observe(block_end, d.recv_time_ns);

        let config = self.detector_config;
        let detector = self.detector.get_or_insert_with(|| PeakDetector::new(fs, config));
        for t in detector.process(&samples, raw.device_timestamp_ns) {
            self.peaks_detected += 1;
            self.window.push_peak(t);
        }
    }

    fn on_device_feature(&mut self, d: &Delivery) {
        let Ok(Message::DeviceFeature(f)) = d.decode() else { return };
        if f.name != DEVICE_HR_FEATURE {
            return;
        }
        self.device_hr.push_back((f.device_timestamp_ns, f.value));
        let horizon = f.device_timestamp_ns - (self.window.window_s() * 1e9) as i64;
        while self.device_hr.front().is_some_and(|&(t, _)| t < horizon) {
            self.device_hr.pop_front();
        }
    }
}

/// Starts an ECG interpreter on `/humans/physiological/<human>/ecg/<sensor>/raw`.
pub fn run_ecg_interpreter(
    bus: &dyn Bus,
    human_id: &str,
    sensor_id: &str,
    config: &InterpreterConfig,
    node_name: Option<&str>,
) -> Result<RunningNode, InterpreterError> {
    run_interpreter(bus, SensorType::Ecg, human_id, sensor_id, config, node_name, DetectorConfig::ECG)
}

/// Starts a PPG interpreter. It also follows the device's own heart-rate
/// reports on `.../device` and compares them with the computed value at every
/// publish.
pub fn run_ppg_interpreter(
    bus: &dyn Bus,
    human_id: &str,
    sensor_id: &str,
    config: &InterpreterConfig,
    node_name: Option<&str>,
) -> Result<RunningNode, InterpreterError> {
    run_interpreter(bus, SensorType::Ppg, human_id, sensor_id, config, node_name, DetectorConfig::PPG)
}

fn run_interpreter(
    bus: &dyn Bus,
    sensor_type: SensorType,
    human_id: &str,
    sensor_id: &str,
    config: &InterpreterConfig,
    node_name: Option<&str>,
    detector_config: DetectorConfig,
) -> Result<RunningNode, InterpreterError> {
    config.validate()?;
    let raw_topic = TopicName::new(human_id, sensor_type, sensor_id, Field::Raw)
        .map_err(|e| InterpreterError::InvalidTopic(e.0))?;
    let features_topic = raw_topic.with_field(Field::Features).to_string();
    let device_topic = raw_topic.with_field(Field::Device).to_string();
    let raw_topic = raw_topic.to_string();

    let default_name = format!("{}_interpreter_{human_id}_{sensor_id}", sensor_type.as_str());
    let params: Vec<(String, ParameterValue)> = vec![
        ("window_s".into(), config.window_s.into()),
        ("publish_hz".into(), config.publish_hz.into()),
        ("raw_topic".into(), raw_topic.as_str().into()),
        ("features_topic".into(), features_topic.as_str().into()),
        ("integration_ms".into(), detector_config.integration_ms.into()),
        ("refractory_ms".into(), detector_config.refractory_ms.into()),
    ];
    let node = bus.create_node(node_name.unwrap_or(&default_name), params)?;

    let state = Arc::new(Mutex::new(State {
        node: node.clone(),
        detector_config,
        channel: config.channel.clone(),
        rate: match config.sampling_frequency_hz {
            Some(fs) => RateSource::Fixed(fs),
            None => RateSource::Discover { asked: HashMap::new(), previous: None },
        },
        detector: None,
        window: RrWindow::new(config.window_s),
        offset: OffsetEstimator::default(),
        peaks_detected: 0,
        last_raw_recv_ns: None,
        device_hr: VecDeque::new(),
    }));

    let mut running = RunningNode::new(node.name().to_owned());
    let raw_sub = {
        let state = Arc::clone(&state);
        node.subscribe(&raw_topic, move |d| state.lock().unwrap().on_raw(d))?
    };
    running.hold(raw_sub);
    let compare_device = sensor_type == SensorType::Ppg;
    if compare_device {
        let state = Arc::clone(&state);
        let sub = node.subscribe(&device_topic, move |d| state.lock().unwrap().on_device_feature(d))?;
        running.hold(sub);
    }

    let stop = running.stop_flag();
    let period_ns = (1e9 / config.publish_hz).round() as i64;
    // Features are withheld once the raw stream has been silent this long.
    let silence_ns = (2 * period_ns).max(2_000_000_000);
    running.spawn("publish", move || {
        let clock = node.clock();
        let mut next = clock.now_ns() + period_ns;
        let mut published: u64 = 0;
        while clock.sleep_until(next, &stop) {
            next += period_ns;
            let mut s = state.lock().unwrap();
            node.set_status("peaks_detected", s.peaks_detected as i64);
            node.set_status("rr_rejected", s.window.rejected() as i64);
            if let Some(off) = s.offset.estimate_ns() {
                node.set_status("clock_offset_ns", off);
            }
            let now = clock.now_ns();
            if s.last_raw_recv_ns.is_none_or(|t| now - t > silence_ns) {
                continue;
            }
            let window_s = s.window.window_s();
            let peak_count = s.window.len() as u32 + 1;
            let Some(summary) = s.window.summary() else { continue };
            let msg = HrvFeatures {
                device_timestamp_ns: s.window.last_peak_ns().unwrap_or_default(),
                rr_ms: summary.last_rr_ms,
                peak_count,
                sdnn_ms: summary.sdnn_ms,
                rmssd_ms: summary.rmssd_ms,
                pnn50_pct: summary.pnn50_pct,
                heart_rate_bpm: summary.heart_rate_bpm,
                window_s,
                ..Default::default()
            };
            if compare_device && !s.device_hr.is_empty() {
                let device = s.device_hr.iter().map(|&(_, v)| v).sum::<f64>() / s.device_hr.len() as f64;
                let d = feature_discrepancy(device, summary.heart_rate_bpm);
                info!(
                    "{}: heart rate device {device:.2} computed {:.2} bpm, abs diff {:.3}, rel diff {:.4}",
                    node.name(),
                    summary.heart_rate_bpm,
                    d.abs_diff,
                    d.rel_diff
                );
                node.set_status("discrepancy_last_abs", d.abs_diff);
                node.set_status("discrepancy_last_rel", d.rel_diff);
            }
            drop(s);
            let msg = match sensor_type {
                SensorType::Ppg => Message::PpgFeatures(msg),
                _ => Message::EcgFeatures(msg),
            };
            match node.publish(&features_topic, msg) {
                Ok(_) => {
                    published += 1;
                    node.set_status("features_published", published as i64);
                }
                Err(e) => warn!("{}: publish failed: {e}", node.name()),
            }
        }
    });
    Ok(running)
}
