//! Sensor driver nodes: simulated ECG and PPG devices with ground truth, and
//! a log-replay driver.
//!
//! A driver only forwards raw frames and the features the device reports
//! itself; interpretation happens in [`crate::interpreters`].

mod replay;
pub mod synth;

use log::warn;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::bus::{BusError, NodeHandle, ParameterValue};
use crate::msgmodel::{BeatTruth, DeviceFeature, Field, PhysioRaw, PhysioRawChannel, SensorType, TopicName};
use crate::recorder::RecorderError;
use crate::runtime::{Bus, RunningNode};

pub use replay::run_replay_driver;
pub use synth::{block_len, Beat, BeatSynth, GaussianWave, SynthBlock, ECG_TEMPLATE, PPG_TEMPLATE};

pub const ECG_CHANNEL: &str = "ecg_mv";
pub const PPG_CHANNEL: &str = "ppg_au";

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Log(#[from] RecorderError),
}

fn default_fs() -> f64 {
    250.0
}
fn default_hr() -> f64 {
    72.0
}
fn default_jitter() -> f64 {
    30.0
}
fn default_ecg_noise() -> f64 {
    0.02
}
fn default_ppg_noise() -> f64 {
    0.01
}
fn default_block_ms() -> f64 {
    200.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcgSimConfig {
    #[serde(default = "default_fs")]
    pub sampling_frequency_hz: f64,
    #[serde(default = "default_hr")]
    pub mean_hr_bpm: f64,
    #[serde(default = "default_jitter")]
    pub rr_jitter_sd_ms: f64,
    #[serde(default = "default_ecg_noise")]
    pub noise_sd_mv: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_block_ms")]
    pub block_ms: f64,
    /// Device clock minus bus clock.
    #[serde(default)]
    pub device_clock_offset_ns: i64,
}

impl Default for EcgSimConfig {
    fn default() -> Self {
        Self {
            sampling_frequency_hz: default_fs(),
            mean_hr_bpm: default_hr(),
            rr_jitter_sd_ms: default_jitter(),
            noise_sd_mv: default_ecg_noise(),
            rng_seed: 0,
            block_ms: default_block_ms(),
            device_clock_offset_ns: 0,
        }
    }
}

impl EcgSimConfig {
    pub fn synth(&self) -> Result<BeatSynth, DriverError> {
        check_block_ms(self.block_ms)?;
        BeatSynth::new(
            self.sampling_frequency_hz,
            self.mean_hr_bpm,
            self.rr_jitter_sd_ms,
            self.noise_sd_mv,
            self.rng_seed,
            &ECG_TEMPLATE,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpgSimConfig {
    #[serde(default = "default_fs")]
    pub sampling_frequency_hz: f64,
    #[serde(default = "default_hr")]
    pub mean_hr_bpm: f64,
    #[serde(default = "default_jitter")]
    pub rr_jitter_sd_ms: f64,
    /// Additive noise, arbitrary units.
    #[serde(default = "default_ppg_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_block_ms")]
    pub block_ms: f64,
    #[serde(default)]
    pub device_clock_offset_ns: i64,
    /// Publish device-side RR and heart rate per beat.
    #[serde(default = "default_true")]
    pub report_device_features: bool,
}

impl Default for PpgSimConfig {
    fn default() -> Self {
        Self {
            sampling_frequency_hz: default_fs(),
            mean_hr_bpm: default_hr(),
            rr_jitter_sd_ms: default_jitter(),
            noise_sd: default_ppg_noise(),
            rng_seed: 0,
            block_ms: default_block_ms(),
            device_clock_offset_ns: 0,
            report_device_features: true,
        }
    }
}

impl PpgSimConfig {
    pub fn synth(&self) -> Result<BeatSynth, DriverError> {
        check_block_ms(self.block_ms)?;
        BeatSynth::new(
            self.sampling_frequency_hz,
            self.mean_hr_bpm,
            self.rr_jitter_sd_ms,
            self.noise_sd,
            self.rng_seed,
            &PPG_TEMPLATE,
        )
    }
}

fn check_block_ms(block_ms: f64) -> Result<(), DriverError> {
    if block_ms.is_finite() && block_ms > 0.0 {
        Ok(())
    } else {
        Err(DriverError::InvalidConfig(format!("block_ms {block_ms} must be > 0")))
    }
}

fn synth_signal(mut synth: BeatSynth, duration_s: f64) -> (Vec<f64>, Vec<i64>) {
    let n = (duration_s.max(0.0) * synth.fs_hz()).round() as usize;
    let block = synth.next_block(n);
    (block.samples, block.beats.iter().map(|b| b.time_ns).collect())
}

/// Synthetic ECG (mV) and the true R-peak times, ns since the first sample.
pub fn synth_ecg(config: &EcgSimConfig, duration_s: f64) -> Result<(Vec<f64>, Vec<i64>), DriverError> {
    Ok(synth_signal(config.synth()?, duration_s))
}

/// Synthetic PPG and the true systolic peak times, ns since the first sample.
pub fn synth_ppg(config: &PpgSimConfig, duration_s: f64) -> Result<(Vec<f64>, Vec<i64>), DriverError> {
    Ok(synth_signal(config.synth()?, duration_s))
}

/// Topics and node name of one simulated device.
struct DeviceSetup {
    node: NodeHandle,
    raw: String,
    device: String,
    truth: String,
}

fn setup_device(
    bus: &dyn Bus,
    node_name: Option<&str>,
    kind: &str,
    sensor_type: SensorType,
    human_id: &str,
    sensor_id: &str,
    params: Vec<(String, ParameterValue)>,
) -> Result<DeviceSetup, DriverError> {
    let base = TopicName::new(human_id, sensor_type, sensor_id, Field::Raw)
        .map_err(|e| DriverError::InvalidTopic(e.0))?;
    let default_name = format!("{kind}_{human_id}_{sensor_id}");
    let node = bus.create_node(node_name.unwrap_or(&default_name), params)?;
    Ok(DeviceSetup {
        node,
        raw: base.to_string(),
        device: base.with_field(Field::Device).to_string(),
        truth: base.with_field(Field::Truth).to_string(),
    })
}

fn sim_params(fs: f64, block_ms: f64, unit: &str, channel: &str, range: (f64, f64)) -> Vec<(String, ParameterValue)> {
    vec![
        ("sampling_frequency_hz".into(), fs.into()),
        ("unit".into(), unit.into()),
        ("channel".into(), channel.into()),
        ("range_min".into(), range.0.into()),
        ("range_max".into(), range.1.into()),
        ("block_ms".into(), block_ms.into()),
    ]
}

/// Per-block hook for device-side extras (PPG device features).
type BeatHook = Box<dyn FnMut(&NodeHandle, &str, i64, &Beat) + Send>;

fn spawn_device_loop(
    running: &mut RunningNode,
    setup: DeviceSetup,
    mut synth: BeatSynth,
    channel: &'static str,
    block_ms: f64,
    device_offset_ns: i64,
    mut on_beat: Option<BeatHook>,
) {
    let stop = running.stop_flag();
    let n = block_len(synth.fs_hz(), block_ms);
    running.spawn("device", move || {
        let node = setup.node;
        let clock = node.clock();
        let t0 = clock.now_ns();
        loop {
            let block_end = t0 + synth.sample_time_ns(synth_next(&synth, n));
            if !clock.sleep_until(block_end, &stop) {
                break;
            }
            let block = synth.next_block(n);
            let raw = PhysioRaw {
                device_timestamp_ns: t0 + device_offset_ns + synth.sample_time_ns(block.first_sample),
                channels: vec![PhysioRawChannel::new(channel, block.samples)],
                ..Default::default()
            };
            if let Err(e) = node.publish(&setup.raw, raw) {
                warn!("{}: publish failed: {e}", node.name());
            }
            for beat in &block.beats {
                let truth = BeatTruth { beat_time_ns: t0 + beat.time_ns, ..Default::default() };
                if let Err(e) = node.publish(&setup.truth, truth) {
                    warn!("{}: publish failed: {e}", node.name());
                }
                if let Some(hook) = on_beat.as_mut() {
                    hook(&node, &setup.device, t0 + device_offset_ns, beat);
                }
            }
        }
    });
}

/// Index one past the last sample of the next block.
fn synth_next(synth: &BeatSynth, n: usize) -> u64 {
    synth.next_sample() + n as u64
}

/// Starts a simulated ECG chest strap publishing `ecg_mv` blocks on
/// `.../ecg/<sensor_id>/raw` and ground-truth beats on `.../truth`.
pub fn run_ecg_driver(
    bus: &dyn Bus,
    human_id: &str,
    sensor_id: &str,
    config: &EcgSimConfig,
    node_name: Option<&str>,
) -> Result<RunningNode, DriverError> {
    let synth = config.synth()?;
    let params = sim_params(config.sampling_frequency_hz, config.block_ms, "mV", ECG_CHANNEL, (-5.0, 5.0));
    let setup = setup_device(bus, node_name, "ecg_driver", SensorType::Ecg, human_id, sensor_id, params)?;
    let mut running = RunningNode::new(setup.node.name().to_owned());
    spawn_device_loop(&mut running, setup, synth, ECG_CHANNEL, config.block_ms, config.device_clock_offset_ns, None);
    Ok(running)
}

/// Starts a simulated PPG sensor. Besides raw `ppg_au` blocks it reports its
/// own RR interval and heart rate per beat on `.../device`, with
/// `Normal(0, 1 ms)` and `Normal(0, 0.5 bpm)` measurement error.
pub fn run_ppg_driver(
    bus: &dyn Bus,
    human_id: &str,
    sensor_id: &str,
    config: &PpgSimConfig,
    node_name: Option<&str>,
) -> Result<RunningNode, DriverError> {
    let synth = config.synth()?;
    let mut params = sim_params(config.sampling_frequency_hz, config.block_ms, "au", PPG_CHANNEL, (-2.0, 2.0));
    params.push(("report_device_features".into(), config.report_device_features.into()));
    let setup = setup_device(bus, node_name, "ppg_driver", SensorType::Ppg, human_id, sensor_id, params)?;
    let mut running = RunningNode::new(setup.node.name().to_owned());
    let hook: Option<BeatHook> = config.report_device_features.then(|| {
        let mut rng = synth::seeded(config.rng_seed, synth::DEVICE_FEATURE_STREAM);
        let rr_err = Normal::new(0.0, 1.0).expect("constant");
        let hr_err = Normal::new(0.0, 0.5).expect("constant");
        Box::new(move |node: &NodeHandle, topic: &str, device_t0: i64, beat: &Beat| {
            let Some(rr) = beat.rr_ms else { return };
            let device_timestamp_ns = device_t0 + beat.time_ns;
            let features = [
                ("rr_ms", rr + rr_err.sample(&mut rng)),
                ("heart_rate_bpm", 60_000.0 / rr + hr_err.sample(&mut rng)),
            ];
            for (name, value) in features {
                let msg = DeviceFeature { device_timestamp_ns, name: name.into(), value, ..Default::default() };
                if let Err(e) = node.publish(topic, msg) {
                    warn!("{}: publish failed: {e}", node.name());
                }
            }
        }) as BeatHook
    });
    spawn_device_loop(&mut running, setup, synth, PPG_CHANNEL, config.block_ms, config.device_clock_offset_ns, hook);
    Ok(running)
}
