use std::path::PathBuf;

use log::{info, warn};

use crate::recorder::{self, RecorderError};
use crate::runtime::{Bus, RunningNode};

use super::DriverError;

/// Starts a node that replays a log file at `rate` times the recorded pace
/// and finishes at its end. The log is validated before the node starts.
pub fn run_replay_driver(
    bus: &dyn Bus,
    log_path: impl Into<PathBuf>,
    rate: f64,
    node_name: Option<&str>,
) -> Result<RunningNode, DriverError> {
    let path = log_path.into();
    if !(rate.is_finite() && rate > 0.0) {
        return Err(RecorderError::InvalidRate(rate).into());
    }
    recorder::list_log(&path)?;
    let node = bus.create_node(node_name.unwrap_or("replay"), Vec::new())?;
    let mut running = RunningNode::new(node.name().to_owned());
    let stop = running.stop_flag();
    running.spawn("replay", move || match recorder::replay(&node, &path, rate, &stop) {
        Ok(s) => info!("replayed {} messages from {}", s.published, path.display()),
        Err(e) => warn!("replay of {} failed: {e}", path.display()),
    });
    Ok(running)
}
