//! Streaming beat detector: moving-average bandpass, derivative, squaring
//! and moving-window integration, with an adaptive threshold on the
//! integrated signal.

use std::collections::VecDeque;

/// Stage lengths of the detector, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Highpass: the signal minus its moving average over this window.
    pub highpass_ms: f64,
    /// Lowpass moving-average window.
    pub lowpass_ms: f64,
    /// Moving-window integration length.
    pub integration_ms: f64,
    pub refractory_ms: f64,
    /// Length of the initial stretch used to seed the threshold.
    pub learning_s: f64,
}

impl DetectorConfig {
    /// 30 and 5 samples at 250 Hz, 150 ms integration.
    pub const ECG: DetectorConfig = DetectorConfig {
        highpass_ms: 120.0,
        lowpass_ms: 20.0,
        integration_ms: 150.0,
        refractory_ms: 200.0,
        learning_s: 2.0,
    };

    /// Pulse waves rise far slower than a QRS complex, so the highpass
    /// window is widened along with the integration window.
    pub const PPG: DetectorConfig = DetectorConfig {
        highpass_ms: 400.0,
        lowpass_ms: 20.0,
        integration_ms: 300.0,
        refractory_ms: 200.0,
        learning_s: 2.0,
    };
}

/// EMA weight of a newly detected peak height.
const PEAK_EMA_ALPHA: f64 = 0.125;
/// Threshold as a fraction of the peak-height EMA.
const THRESHOLD_FRACTION: f64 = 0.5;
/// Running sums are recomputed from scratch this often to stop drift.
const RESYNC_EVERY: u32 = 4096;

fn samples_for(ms: f64, fs_hz: f64) -> usize {
    ((ms * fs_hz / 1000.0).round() as usize).max(1)
}

/// Moving average over the last `len` values.
#[derive(Debug, Clone)]
struct MovingAverage {
    buf: VecDeque<f64>,
    len: usize,
    sum: f64,
    since_resync: u32,
}

impl MovingAverage {
    fn new(len: usize, fill: f64) -> Self {
        Self {
            buf: std::iter::repeat_n(fill, len).collect(),
            len,
            sum: fill * len as f64,
            since_resync: 0,
        }
    }

    fn push(&mut self, v: f64) -> f64 {
        let old = self.buf.pop_front().unwrap_or(0.0);
        self.buf.push_back(v);
        self.since_resync += 1;
        if self.since_resync >= RESYNC_EVERY {
            self.sum = self.buf.iter().sum();
            self.since_resync = 0;
        } else {
            self.sum += v - old;
        }
        self.sum / self.len as f64
    }

    /// Value at the centre of the window (mean of the two middle values for
    /// an even length).
    fn centre(&self) -> f64 {
        let n = self.buf.len();
        if n % 2 == 1 {
            self.buf[n / 2]
        } else {
            0.5 * (self.buf[n / 2 - 1] + self.buf[n / 2])
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Hump {
    max: f64,
    /// Sample index of `max`.
    index: u64,
}

/// Streaming beat detector. Feed consecutive blocks with
/// [`PeakDetector::process`]; results do not depend on how the signal is cut
/// into blocks.
#[derive(Debug, Clone)]
pub struct PeakDetector {
    fs_hz: f64,
    config: DetectorConfig,
    highpass: Option<MovingAverage>,
    lowpass: MovingAverage,
    integrator: MovingAverage,
    integration_len: usize,
    refractory: f64,
    learning_len: usize,
    /// Delay of the bandpassed signal behind the input, samples.
    bandpass_delay: f64,
    /// Index of the next input sample.
    next_index: u64,
    /// Bandpassed values with the index of the first one.
    bandpassed: VecDeque<f64>,
    bandpassed_start: u64,
    history_len: usize,
    prev_bandpassed: [f64; 2],
    /// Integrated values of the learning phase, replayed once the threshold
    /// is known.
    learning: Vec<(u64, f64)>,
    peak_ema: Option<f64>,
    hump: Option<Hump>,
    last_peak_position: Option<f64>,
    /// `(first sample index, device time)` of blocks that started a
    /// continuous run of samples.
    anchors: VecDeque<(u64, i64)>,
    pending: Vec<f64>,
}

impl PeakDetector {
    pub fn new(fs_hz: f64, config: DetectorConfig) -> Self {
        assert!(fs_hz.is_finite() && fs_hz > 0.0, "sampling frequency must be positive");
        let highpass_len = samples_for(config.highpass_ms, fs_hz);
        let lowpass_len = samples_for(config.lowpass_ms, fs_hz);
        let integration_len = samples_for(config.integration_ms, fs_hz);
        let learning_len = ((config.learning_s * fs_hz).round() as usize).max(1);
        Self {
            fs_hz,
            config,
            highpass: None,
            lowpass: MovingAverage::new(lowpass_len, 0.0),
            integrator: MovingAverage::new(integration_len, 0.0),
            integration_len,
            refractory: config.refractory_ms * fs_hz / 1000.0,
            learning_len,
            bandpass_delay: (highpass_len - 1) as f64 / 2.0 + (lowpass_len - 1) as f64 / 2.0,
            next_index: 0,
            bandpassed: VecDeque::new(),
            bandpassed_start: 0,
            history_len: learning_len + 2 * integration_len + fs_hz.ceil() as usize,
            prev_bandpassed: [0.0; 2],
            learning: Vec::new(),
            peak_ema: None,
            hump: None,
            last_peak_position: None,
            anchors: VecDeque::new(),
            pending: Vec::new(),
        }
    }

    pub fn ecg(fs_hz: f64) -> Self {
        Self::new(fs_hz, DetectorConfig::ECG)
    }

    pub fn ppg(fs_hz: f64) -> Self {
        Self::new(fs_hz, DetectorConfig::PPG)
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Current threshold on the integrated signal; `None` while learning.
    pub fn threshold(&self) -> Option<f64> {
        self.peak_ema.map(|e| THRESHOLD_FRACTION * e)
    }

    /// Processes one block whose first sample was taken at `t0_ns` and
    /// returns the peak times confirmed by it, in the same clock as `t0_ns`.
    pub fn process(&mut self, samples: &[f64], t0_ns: i64) -> Vec<i64> {
        if samples.is_empty() {
            return Vec::new();
        }
        self.anchor_block(t0_ns);
        for &x in samples {
            self.step(x);
        }
        let found = std::mem::take(&mut self.pending);
        let times = found.iter().map(|&p| self.time_of(p)).collect();
        self.trim_anchors();
        times
    }

    /// Confirms a peak still open at the end of the input, for callers that
    /// know no more samples follow.
    pub fn flush(&mut self) -> Vec<i64> {
        if let Some(h) = self.hump.take() {
            self.finish_hump(h);
        }
        let found = std::mem::take(&mut self.pending);
        found.iter().map(|&p| self.time_of(p)).collect()
    }

    fn anchor_block(&mut self, t0_ns: i64) {
        let idx = self.next_index;
        if let Some(&(first, t)) = self.anchors.back() {
            // Keep the current anchor while blocks continue it seamlessly.
            let expected = t as f64 + (idx - first) as f64 * 1e9 / self.fs_hz;
            if (t0_ns as f64 - expected).abs() <= 0.5e9 / self.fs_hz {
                return;
            }
        }
        self.anchors.push_back((idx, t0_ns));
    }

    fn trim_anchors(&mut self) {
        let keep_from = self.bandpassed_start.saturating_sub(self.history_len as u64);
        while self.anchors.len() > 1 && self.anchors[1].0 <= keep_from {
            self.anchors.pop_front();
        }
    }

    fn time_of(&self, position: f64) -> i64 {
        let &(first, t0) = self
            .anchors
            .iter()
            .rev()
            .find(|(first, _)| (*first as f64) <= position)
            .or(self.anchors.front())
            .expect("anchored before processing");
        t0 + ((position - first as f64) * 1e9 / self.fs_hz).round() as i64
    }

    fn step(&mut self, x: f64) {
        let index = self.next_index;
        self.next_index += 1;
        let hp_len = samples_for(self.config.highpass_ms, self.fs_hz);
        // Pad the start with the first value so a DC offset causes no transient.
        let highpass = self.highpass.get_or_insert_with(|| MovingAverage::new(hp_len, x));
        let mean = highpass.push(x);
        let hp = highpass.centre() - mean;
        let bp = self.lowpass.push(hp);

        self.bandpassed.push_back(bp);
        while self.bandpassed.len() > self.history_len {
            self.bandpassed.pop_front();
            self.bandpassed_start += 1;
        }
        let derivative = (bp - self.prev_bandpassed[1]) / 2.0;
        self.prev_bandpassed = [bp, self.prev_bandpassed[0]];
        let integrated = self.integrator.push(derivative * derivative);

        if self.peak_ema.is_some() {
            self.track(index, integrated);
            return;
        }
        self.learning.push((index, integrated));
        if self.learning.len() >= self.learning_len {
            let max = self.learning.iter().map(|&(_, v)| v).fold(0.0, f64::max);
            let learned = std::mem::take(&mut self.learning);
            if max > 0.0 {
                self.peak_ema = Some(max);
                for (i, v) in learned {
                    self.track(i, v);
                }
            }
        }
    }

    /// Follows humps of the integrated signal above the threshold.
    fn track(&mut self, index: u64, value: f64) {
        let threshold = self.threshold().expect("initialized");
        match &mut self.hump {
            Some(h) if value >= threshold => {
                if value > h.max {
                    h.max = value;
                    h.index = index;
                }
            }
            Some(h) => {
                let h = *h;
                self.hump = None;
                self.finish_hump(h);
            }
            None if value >= threshold => self.hump = Some(Hump { max: value, index }),
            None => {}
        }
    }

    fn finish_hump(&mut self, hump: Hump) {
        let Some(position) = self.locate(hump.index) else { return };
        if self.last_peak_position.is_some_and(|last| position - last < self.refractory) {
            return;
        }
        self.last_peak_position = Some(position);
        let ema = self.peak_ema.expect("initialized");
        self.peak_ema = Some(PEAK_EMA_ALPHA * hump.max + (1.0 - PEAK_EMA_ALPHA) * ema);
        self.pending.push(position);
    }

    /// Input sample position of the bandpassed maximum inside the
    /// integration window that ends at `index`.
    fn locate(&self, index: u64) -> Option<f64> {
        let lo = index.saturating_sub(self.integration_len as u64 + 1).max(self.bandpassed_start);
        let hi = index.min(self.bandpassed_start + self.bandpassed.len() as u64 - 1);
        if lo > hi {
            return None;
        }
        let mut best = (lo, f64::NEG_INFINITY);
        for i in lo..=hi {
            let v = self.bandpassed[(i - self.bandpassed_start) as usize];
            if v > best.1 {
                best = (i, v);
            }
        }
        Some(best.0 as f64 - self.bandpass_delay)
    }
}

/// Runs `detector` over one block; see [`PeakDetector::process`].
pub fn detect_r_peaks(detector: &mut PeakDetector, samples: &[f64], t0_ns: i64) -> Vec<i64> {
    detector.process(samples, t0_ns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{synth_ecg, synth_ppg, EcgSimConfig, PpgSimConfig, ECG_TEMPLATE};

    fn matched(truth: &[i64], found: &[i64], tol_ns: i64) -> usize {
        truth.iter().filter(|t| found.iter().any(|f| (*f - **t).abs() <= tol_ns)).count()
    }

    #[test]
    fn clean_ecg_at_60_bpm() {
        let cfg = EcgSimConfig { mean_hr_bpm: 60.0, rr_jitter_sd_ms: 0.0, noise_sd_mv: 0.0, ..Default::default() };
        let (x, truth) = synth_ecg(&cfg, 10.0).unwrap();
        let mut d = PeakDetector::ecg(250.0);
        let mut peaks = d.process(&x, 0);
        peaks.extend(d.flush());
        assert_eq!(peaks.len(), truth.len());
        assert_eq!(matched(&truth, &peaks, 30_000_000), truth.len());
    }

    #[test]
    fn zeros_give_no_peaks() {
        let mut d = PeakDetector::ecg(250.0);
        assert!(d.process(&vec![0.0; 2500], 0).is_empty());
        assert!(d.threshold().is_none());
        assert!(d.process(&[], 0).is_empty());
    }

    #[test]
    fn beats_inside_refractory_period_count_once() {
        let fs = 250.0;
        let mut x = vec![0.0; 1000];
        for beat_ms in [1000.0, 1150.0] {
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 * 1000.0 / fs;
                for w in &ECG_TEMPLATE {
                    *v += w.amplitude * (-0.5 * ((t - beat_ms - w.offset_ms) / w.width_ms).powi(2)).exp();
                }
            }
        }
        let peaks = PeakDetector::ecg(fs).process(&x, 0);
        assert_eq!(peaks.len(), 1, "{peaks:?}");
    }

    #[test]
    fn block_splitting_does_not_change_peaks() {
        let (x, _) = synth_ecg(&EcgSimConfig::default(), 20.0).unwrap();
        let whole = PeakDetector::ecg(250.0).process(&x, 1_000);
        let mut d = PeakDetector::ecg(250.0);
        let mut split = Vec::new();
        for (k, chunk) in x.chunks(37).enumerate() {
            split.extend(d.process(chunk, 1_000 + (k * 37) as i64 * 4_000_000));
        }
        assert_eq!(whole, split);
    }

    #[test]
    fn gap_in_block_times_shifts_later_peaks() {
        let (x, _) = synth_ecg(&EcgSimConfig::default(), 20.0).unwrap();
        let mut d = PeakDetector::ecg(250.0);
        let mut peaks = d.process(&x[..2500], 0);
        peaks.extend(d.process(&x[2500..], 10_000_000_000 + 5_000_000_000));
        let whole = PeakDetector::ecg(250.0).process(&x, 0);
        let late: Vec<_> = whole.iter().filter(|&&t| t > 11_000_000_000).map(|t| t + 5_000_000_000).collect();
        assert!(late.iter().all(|t| peaks.contains(t)));
    }

    #[test]
    fn ppg_peaks_track_systolic_maxima() {
        let cfg = PpgSimConfig { mean_hr_bpm: 60.0, rr_jitter_sd_ms: 0.0, ..Default::default() };
        let (x, truth) = synth_ppg(&cfg, 30.0).unwrap();
        let peaks = PeakDetector::ppg(250.0).process(&x, 0);
        assert!(matched(&truth, &peaks, 40_000_000) >= truth.len() - 1, "{peaks:?} vs {truth:?}");
        assert!(peaks.len() <= truth.len());
    }
}
