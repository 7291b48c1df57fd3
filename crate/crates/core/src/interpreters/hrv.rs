//! Time-domain heart rate variability over a window of RR intervals.

use std::collections::VecDeque;

use thiserror::Error;

/// Shortest and longest RR interval accepted, ms.
pub const RR_RANGE_MS: (f64, f64) = (300.0, 2000.0);
/// Most intervals an [`RrWindow`] keeps.
pub const RR_WINDOW_CAPACITY: usize = 600;
/// Successive-difference cut-off of pNN50, ms.
const NN50_MS: f64 = 50.0;
/// Guard against division by zero in [`feature_discrepancy`].
const DISCREPANCY_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HrvError {
    #[error("empty RR window")]
    EmptyWindow,
    #[error("need at least {needed} RR intervals, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("peak times decrease at index {index}")]
    NonMonotonicInput { index: usize },
}

fn need_two(rr: &[f64]) -> Result<(), HrvError> {
    if rr.len() < 2 {
        return Err(HrvError::InsufficientData { needed: 2, got: rr.len() });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rr_in_range(rr_ms: f64) -> bool {
    (RR_RANGE_MS.0..=RR_RANGE_MS.1).contains(&rr_ms)
}

/// RR intervals between consecutive peaks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RrSeries {
    pub rr_ms: Vec<f64>,
    /// Intervals dropped for falling outside [`RR_RANGE_MS`].
    pub rejected: usize,
}

pub fn rr_from_peaks(peak_times_ns: &[i64]) -> Result<RrSeries, HrvError> {
    let mut out = RrSeries::default();
    for (i, pair) in peak_times_ns.windows(2).enumerate() {
        if pair[1] < pair[0] {
            return Err(HrvError::NonMonotonicInput { index: i + 1 });
        }
        let rr = (pair[1] - pair[0]) as f64 / 1e6;
        if rr_in_range(rr) {
            out.rr_ms.push(rr);
        } else {
            out.rejected += 1;
        }
    }
    Ok(out)
}

/// Beats per minute from the mean RR interval.
pub fn compute_hr(rr_ms: &[f64]) -> Result<f64, HrvError> {
    if rr_ms.is_empty() {
        return Err(HrvError::EmptyWindow);
    }
    Ok(60_000.0 / mean(rr_ms))
}

/// Sample standard deviation (divisor N−1) of the intervals.
pub fn compute_sdnn(rr_ms: &[f64]) -> Result<f64, HrvError> {
    need_two(rr_ms)?;
    let m = mean(rr_ms);
    let ss: f64 = rr_ms.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / (rr_ms.len() - 1) as f64).sqrt())
}

/// Root mean square of successive differences.
pub fn compute_rmssd(rr_ms: &[f64]) -> Result<f64, HrvError> {
    need_two(rr_ms)?;
    let ss: f64 = rr_ms.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Ok((ss / (rr_ms.len() - 1) as f64).sqrt())
}

/// Percentage of successive differences strictly above 50 ms.
pub fn compute_pnn50(rr_ms: &[f64]) -> Result<f64, HrvError> {
    need_two(rr_ms)?;
    let n = rr_ms.windows(2).filter(|w| (w[1] - w[0]).abs() > NN50_MS).count();
    Ok(100.0 * n as f64 / (rr_ms.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub abs_diff: f64,
    pub rel_diff: f64,
}

/// Difference between a device-reported and a computed feature value.
pub fn feature_discrepancy(device_value: f64, computed_value: f64) -> Discrepancy {
    let abs_diff = (device_value - computed_value).abs();
    let scale = device_value.abs().max(computed_value.abs()).max(DISCREPANCY_EPSILON);
    Discrepancy { abs_diff, rel_diff: abs_diff / scale }
}

/// All metrics of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrvSummary {
    pub last_rr_ms: f64,
    pub intervals: usize,
    pub heart_rate_bpm: f64,
    pub sdnn_ms: f64,
    pub rmssd_ms: f64,
    pub pnn50_pct: f64,
}

pub fn summarize(rr_ms: &[f64]) -> Result<HrvSummary, HrvError> {
    need_two(rr_ms)?;
    Ok(HrvSummary {
        last_rr_ms: rr_ms[rr_ms.len() - 1],
        intervals: rr_ms.len(),
        heart_rate_bpm: compute_hr(rr_ms)?,
        sdnn_ms: compute_sdnn(rr_ms)?,
        rmssd_ms: compute_rmssd(rr_ms)?,
        pnn50_pct: compute_pnn50(rr_ms)?,
    })
}

/// RR intervals ending within the trailing `window_s` seconds of the latest
/// peak, in chronological order.
#[derive(Debug, Clone)]
pub struct RrWindow {
    window_ns: i64,
    /// `(time of the closing peak, rr)`.
    entries: VecDeque<(i64, f64)>,
    rr: Vec<f64>,
    last_peak_ns: Option<i64>,
    rejected: u64,
}

impl RrWindow {
    pub fn new(window_s: f64) -> Self {
        assert!(window_s.is_finite() && window_s > 0.0, "window must be positive");
        Self {
            window_ns: (window_s * 1e9).round() as i64,
            entries: VecDeque::new(),
            rr: Vec::new(),
            last_peak_ns: None,
            rejected: 0,
        }
    }

    pub fn window_s(&self) -> f64 {
        self.window_ns as f64 / 1e9
    }

    /// Adds a detected peak and returns the new interval if it was accepted.
    /// Peaks earlier than the previous one are ignored.
    pub fn push_peak(&mut self, t_ns: i64) -> Option<f64> {
        let prev = self.last_peak_ns;
        if prev.is_some_and(|p| t_ns < p) {
            return None;
        }
        self.last_peak_ns = Some(t_ns);
        let rr = (t_ns - prev?) as f64 / 1e6;
        let accepted = rr_in_range(rr);
        if accepted {
            self.entries.push_back((t_ns, rr));
            if self.entries.len() > RR_WINDOW_CAPACITY {
                self.entries.pop_front();
            }
        } else {
            self.rejected += 1;
        }
        while self.entries.front().is_some_and(|&(t, _)| t_ns - t > self.window_ns) {
            self.entries.pop_front();
        }
        accepted.then_some(rr)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn last_peak_ns(&self) -> Option<i64> {
        self.last_peak_ns
    }

    pub fn intervals(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, rr)| rr)
    }

    /// Metrics over the window; `None` with fewer than two intervals.
    pub fn summary(&mut self) -> Option<HrvSummary> {
        self.rr.clear();
        self.rr.extend(self.entries.iter().map(|&(_, rr)| rr));
        summarize(&self.rr).ok()
    }
}
