//! Bus time sources.
//!
//! Bus time is nanoseconds since the Unix epoch. [`ScaledClock`] runs faster
//! than real time so long simulated sessions can be exercised quickly; every
//! node sharing the broker sees the same accelerated timeline.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Longest single real-time sleep, so stop requests are noticed promptly.
const SLEEP_SLICE: Duration = Duration::from_millis(10);

pub trait Clock: Send + Sync + fmt::Debug {
    fn now_ns(&self) -> i64;

    /// Real time that elapses while `bus_ns` of bus time passes.
    fn real_duration(&self, bus_ns: i64) -> Duration;

    /// Blocks until bus time reaches `deadline_ns` or `stop` is raised.
    /// Returns `false` if stopped.
    fn sleep_until(&self, deadline_ns: i64, stop: &AtomicBool) -> bool {
        loop {
            if stop.load(Ordering::Acquire) {
                return false;
            }
            let remaining = deadline_ns - self.now_ns();
            if remaining <= 0 {
                return true;
            }
            std::thread::sleep(self.real_duration(remaining).min(SLEEP_SLICE));
        }
    }
}

pub fn wall_clock_ns() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as i64)
        .unwrap_or(0)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ns(&self) -> i64 {
        wall_clock_ns()
    }

    fn real_duration(&self, bus_ns: i64) -> Duration {
        Duration::from_nanos(bus_ns.max(0) as u64)
    }
}

/// Bus time that starts at the wall clock and advances `speed` times faster.
#[derive(Debug)]
pub struct ScaledClock {
    origin_ns: i64,
    origin: Instant,
    speed: f64,
}

impl ScaledClock {
    pub fn new(speed: f64) -> Self {
        assert!(speed.is_finite() && speed > 0.0, "clock speed must be positive");
        Self { origin_ns: wall_clock_ns(), origin: Instant::now(), speed }
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }
}

impl Clock for ScaledClock {
    fn now_ns(&self) -> i64 {
        let elapsed = self.origin.elapsed().as_nanos() as f64 * self.speed;
        self.origin_ns + elapsed as i64
    }

    fn real_duration(&self, bus_ns: i64) -> Duration {
        Duration::from_nanos((bus_ns.max(0) as f64 / self.speed) as u64)
    }
}
