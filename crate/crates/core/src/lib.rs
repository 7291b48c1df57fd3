//! Middleware for physiological sensing: typed publish/subscribe transport
//! of physiological time-series under a fixed topic hierarchy, sensor driver
//! and interpreter nodes, device clock synchronization, heart rate
//! variability features, affective-state fusion and record/replay.

pub mod bus;
pub mod clock;
pub mod drivers;
pub mod fusion;
pub mod interpreters;
pub mod msgmodel;
pub mod recorder;
pub mod runtime;
pub mod testkit;
pub mod timesync;

pub use runtime::{Bus, RemoteBus, RunningNode};
