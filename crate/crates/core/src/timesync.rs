//! Device clock to bus clock offset estimation.
//!
//! Each observation pairs a device timestamp with the bus time at which the
//! message was received; `recv - device` is the clock offset plus a
//! nonnegative transport delay. The minimum over a sliding window is the
//! observation with the least delay and therefore the tightest upper bound
//! on the true offset.

use std::collections::VecDeque;

use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("offset estimator has no observations")]
pub struct NoObservations;

#[derive(Debug, Clone)]
pub struct OffsetEstimator {
    window: VecDeque<i64>,
    capacity: usize,
    estimate_ns: Option<i64>,
}

impl Default for OffsetEstimator {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl OffsetEstimator {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must hold at least one observation");
        Self { window: VecDeque::with_capacity(window), capacity: window, estimate_ns: None }
    }

    /// Adds one `(device, receive)` pair and returns the updated estimate.
    pub fn observe(&mut self, device_ns: i64, recv_ns: i64) -> i64 {
        let offset = recv_ns.saturating_sub(device_ns);
        let evicted = if self.window.len() == self.capacity { self.window.pop_front() } else { None };
        self.window.push_back(offset);
        let estimate = match (self.estimate_ns, evicted) {
            // The old minimum aged out: rescan.
            (Some(est), Some(old)) if old == est => *self.window.iter().min().expect("nonempty"),
            (Some(est), _) => est.min(offset),
            (None, _) => offset,
        };
        self.estimate_ns = Some(estimate);
        estimate
    }

    pub fn estimate_ns(&self) -> Option<i64> {
        self.estimate_ns
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn to_bus_time(&self, device_ns: i64) -> Result<i64, NoObservations> {
        self.estimate_ns.map(|est| device_ns + est).ok_or(NoObservations)
    }
}
