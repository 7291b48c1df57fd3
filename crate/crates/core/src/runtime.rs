//! Lifecycle of node tasks.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::bus::{BusError, NodeHandle, Parameters};

/// Something that can host nodes: a local [`crate::bus::Broker`] or a remote
/// broker reached over TCP.
pub trait Bus {
    fn create_node(&self, name: &str, parameters: Parameters) -> Result<NodeHandle, BusError>;
}

impl Bus for crate::bus::Broker {
    fn create_node(&self, name: &str, parameters: Parameters) -> Result<NodeHandle, BusError> {
        crate::bus::Broker::create_node(self, name, parameters)
    }
}

/// Remote broker address; every node gets its own connection.
#[derive(Debug, Clone)]
pub struct RemoteBus(pub String);

impl Bus for RemoteBus {
    fn create_node(&self, name: &str, parameters: Parameters) -> Result<NodeHandle, BusError> {
        crate::bus::tcp::connect_tcp(self.0.as_str(), name, parameters)
    }
}

/// A started node: its tasks plus whatever must outlive them (subscriptions,
/// the node handle). Dropping it stops the node.
pub struct RunningNode {
    name: String,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    keep_alive: Vec<Box<dyn Send>>,
}

impl RunningNode {
    /// An empty node; add tasks with [`RunningNode::spawn`].
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            stop: Arc::new(AtomicBool::new(false)),
            threads: Vec::new(),
            keep_alive: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Raised when the node is stopped; tasks should poll it.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn spawn(&mut self, task: &str, f: impl FnOnce() + Send + 'static) {
        let t = thread::Builder::new()
            .name(format!("{}-{task}", self.name))
            .spawn(f)
            .expect("spawn node thread");
        self.threads.push(t);
    }

    /// Keeps `v` alive until the tasks have stopped.
    pub fn hold(&mut self, v: impl Send + 'static) {
        self.keep_alive.push(Box::new(v));
    }

    /// True once every task has returned (e.g. a replay reached the end).
    pub fn is_finished(&self) -> bool {
        self.threads.iter().all(|t| t.is_finished())
    }

    /// Waits for the tasks to finish on their own.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn stop(self) {
        drop(self);
    }
}

impl Drop for RunningNode {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        // Subscriptions and handles go last, after the tasks stopped using them.
        self.keep_alive.clear();
    }
}
