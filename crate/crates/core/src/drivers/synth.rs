//! Gaussian-template beat synthesizers used by the simulated ECG and PPG
//! devices.
//!
//! RR intervals are drawn from `Normal(60000 / mean_hr, jitter)` and clamped
//! to `[300, 2000]` ms. The first beat sits half an RR interval after the
//! first sample. RR draws and measurement noise use separate ChaCha streams
//! of the same seed, so generating in blocks of any size yields exactly the
//! same samples as one long call.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DriverError;

pub const RR_MIN_MS: f64 = 300.0;
pub const RR_MAX_MS: f64 = 2000.0;

const RR_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
pub(crate) const DEVICE_FEATURE_STREAM: u64 = 2;

/// One Gaussian component of a beat, positioned relative to the beat time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianWave {
    pub amplitude: f64,
    /// Standard deviation, ms.
    pub width_ms: f64,
    pub offset_ms: f64,
}

const fn wave(amplitude: f64, width_ms: f64, offset_ms: f64) -> GaussianWave {
    GaussianWave { amplitude, width_ms, offset_ms }
}

/// P, Q, R, S, T waves in mV; the beat time is the R peak.
pub const ECG_TEMPLATE: [GaussianWave; 5] = [
    wave(0.15, 25.0, -80.0),
    wave(-0.10, 10.0, -20.0),
    wave(1.00, 12.0, 0.0),
    wave(-0.25, 10.0, 20.0),
    wave(0.35, 40.0, 120.0),
];

/// Systolic peak at the beat time and a dicrotic wave 250 ms later.
pub const PPG_TEMPLATE: [GaussianWave; 2] = [wave(1.0, 90.0, 0.0), wave(0.35, 120.0, 250.0)];

/// Components are evaluated within this many widths of their center.
const SUPPORT_WIDTHS: f64 = 8.0;

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streaming generator of a template signal with known beat times.
#[derive(Debug, Clone)]
pub struct BeatSynth {
    fs_hz: f64,
    template: &'static [GaussianWave],
    rr: Normal<f64>,
    noise: Normal<f64>,
    rr_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    /// Beats (ms since the first sample) that may still touch future samples.
    live: VecDeque<(f64, Option<f64>)>,
    /// Time of the latest generated beat.
    last_beat_ms: Option<f64>,
    next_sample: u64,
    reach_before_ms: f64,
    reach_after_ms: f64,
}

/// One generated block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthBlock {
    /// Index of the first sample since the start of the signal.
    pub first_sample: u64,
    pub samples: Vec<f64>,
    /// Beats whose time lies in `[first sample, first sample of the next block)`.
    pub beats: Vec<Beat>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beat {
    /// Time since the first sample of the signal.
    pub time_ns: i64,
    /// Interval from the previous beat; `None` for the first beat.
    pub rr_ms: Option<f64>,
}

impl BeatSynth {
    pub fn new(
        fs_hz: f64,
        mean_hr_bpm: f64,
        rr_jitter_sd_ms: f64,
        noise_sd: f64,
        seed: u64,
        template: &'static [GaussianWave],
    ) -> Result<Self, DriverError> {
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(DriverError::InvalidConfig(format!("sampling frequency {fs_hz} must be > 0")));
        }
        if !(mean_hr_bpm > 20.0 && mean_hr_bpm < 250.0) {
            return Err(DriverError::InvalidConfig(format!("mean heart rate {mean_hr_bpm} outside (20, 250)")));
        }
        if !(rr_jitter_sd_ms.is_finite() && rr_jitter_sd_ms >= 0.0) {
            return Err(DriverError::InvalidConfig(format!("RR jitter {rr_jitter_sd_ms} must be >= 0")));
        }
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(DriverError::InvalidConfig(format!("noise sd {noise_sd} must be >= 0")));
        }
        let reach_before_ms = template
            .iter()
            .map(|w| SUPPORT_WIDTHS * w.width_ms - w.offset_ms)
            .fold(0.0, f64::max);
        let reach_after_ms = template
            .iter()
            .map(|w| SUPPORT_WIDTHS * w.width_ms + w.offset_ms)
            .fold(0.0, f64::max);
        Ok(Self {
            fs_hz,
            template,
            rr: Normal::new(60_000.0 / mean_hr_bpm, rr_jitter_sd_ms).expect("validated"),
            noise: Normal::new(0.0, noise_sd).expect("validated"),
            rr_rng: seeded(seed, RR_STREAM),
            noise_rng: seeded(seed, NOISE_STREAM),
            live: VecDeque::new(),
            last_beat_ms: None,
            next_sample: 0,
            reach_before_ms,
            reach_after_ms,
        })
    }

    /// Index of the next sample to be generated.
    pub fn next_sample(&self) -> u64 {
        self.next_sample
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    /// Time of sample `index` since the first sample, ns.
    pub fn sample_time_ns(&self, index: u64) -> i64 {
        (index as f64 * 1e9 / self.fs_hz).round() as i64
    }

    fn draw_rr(&mut self) -> f64 {
        self.rr.sample(&mut self.rr_rng).clamp(RR_MIN_MS, RR_MAX_MS)
    }

    fn value_at(&self, t_ms: f64) -> f64 {
        let mut v = 0.0;
        for &(beat_ms, _) in &self.live {
            for w in self.template {
                let d = t_ms - (beat_ms + w.offset_ms);
                if d.abs() <= SUPPORT_WIDTHS * w.width_ms {
                    v += w.amplitude * (-0.5 * (d / w.width_ms).powi(2)).exp();
                }
            }
        }
        v
    }

    /// Generates the next `n` samples.
    pub fn next_block(&mut self, n: usize) -> SynthBlock {
        let first = self.next_sample;
        let end = first + n as u64;
        let end_ms = end as f64 * 1000.0 / self.fs_hz;
        let block_start_ns = self.sample_time_ns(first);
        let block_end_ns = self.sample_time_ns(end);

        // Every beat whose support starts before the end of the block.
        while self.last_beat_ms.map_or(true, |last| last - self.reach_before_ms < end_ms) {
            let rr = self.draw_rr();
            let (beat, rr_ms) = match self.last_beat_ms {
                None => (rr / 2.0, None),
                Some(last) => (last + rr, Some(rr)),
            };
            self.last_beat_ms = Some(beat);
            self.live.push_back((beat, rr_ms));
        }

        let mut samples = Vec::with_capacity(n);
        for i in first..end {
            let t_ms = i as f64 * 1000.0 / self.fs_hz;
            samples.push(self.value_at(t_ms) + self.noise.sample(&mut self.noise_rng));
        }

        let beats = self
            .live
            .iter()
            .map(|&(ms, rr_ms)| Beat { time_ns: (ms * 1e6).round() as i64, rr_ms })
            .filter(|b| b.time_ns >= block_start_ns && b.time_ns < block_end_ns)
            .collect();

        while self.live.front().is_some_and(|&(b, _)| b + self.reach_after_ms < end_ms) {
            self.live.pop_front();
        }
        self.next_sample = end;
        SynthBlock { first_sample: first, samples, beats }
    }
}

/// Samples per block of `block_ms`, at least one.
pub fn block_len(fs_hz: f64, block_ms: f64) -> usize {
    ((fs_hz * block_ms / 1000.0).round() as usize).max(1)
}
