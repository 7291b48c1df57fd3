//! WebSocket gateway between the bus and browser clients.
//!
//! Clients send JSON commands (`subscribe`, `unsubscribe`, `list`,
//! `param_get`, `record_start`, `record_stop`, `annotate`) and receive
//! `msg`, `status` and `error` objects. See `docs/bridge-protocol.md`.

mod client;
mod decimate;

use std::io;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{info, warn};
use physiobus::bus::{BusError, NodeHandle};
use physiobus::recorder::RecordingSession;
use physiobus::Bus;
use thiserror::Error;

pub use decimate::RAW_MAX_RATE_HZ;

/// Topic that carries experimenter annotations.
pub const EVENTS_TOPIC: &str = "/experiment/events";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// State shared by all client connections.
pub(crate) struct Shared {
    pub node: NodeHandle,
    pub recording: Mutex<Option<RecordingSession>>,
    pub stop: AtomicBool,
}

/// A running bridge. Dropping it stops accepting and closes all clients.
pub struct BridgeServer {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops the bridge; an active recording is finalized first.
    pub fn shutdown(self) {
        drop(self);
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        if let Some(session) = self.shared.recording.lock().unwrap().take() {
            let now = self.shared.node.now_ns();
            match session.stop(now) {
                Ok(s) => info!("recording {} closed with {} records", s.path.display(), s.records),
                Err(e) => warn!("closing recording failed: {e}"),
            }
        }
    }
}

/// Serves the WebSocket protocol on `addr` through a node named `bridge`.
pub fn serve_ws(bus: &dyn Bus, addr: impl ToSocketAddrs) -> Result<BridgeServer, BridgeError> {
    serve_ws_named(bus, addr, "bridge")
}

pub fn serve_ws_named(bus: &dyn Bus, addr: impl ToSocketAddrs, node_name: &str) -> Result<BridgeServer, BridgeError> {
    let addr_text = addr.to_socket_addrs().ok().and_then(|mut a| a.next()).map_or("?".into(), |a| a.to_string());
    let listener = TcpListener::bind(addr).map_err(|source| BridgeError::Bind { addr: addr_text.clone(), source })?;
    listener.set_nonblocking(true).map_err(|source| BridgeError::Bind { addr: addr_text, source })?;
    let local_addr = listener.local_addr().expect("bound socket has an address");
    let node = bus.create_node(node_name, vec![("ws_address".into(), local_addr.to_string().into())])?;
    let shared = Arc::new(Shared { node, recording: Mutex::new(None), stop: AtomicBool::new(false) });

    let accept = {
        let shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("bridge-accept".into())
            .spawn(move || accept_loop(listener, shared))
            .expect("spawn accept thread")
    };
    info!("bridge listening on ws://{local_addr}");
    Ok(BridgeServer { local_addr, shared, accept: Some(accept) })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut clients: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let shared = Arc::clone(&shared);
                let t = thread::Builder::new()
                    .name(format!("bridge-client-{peer}"))
                    .spawn(move || client::run(stream, peer, shared))
                    .expect("spawn client thread");
                clients.push(t);
                clients.retain(|t| !t.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => {
                warn!("bridge accept failed: {e}");
                thread::sleep(Duration::from_millis(100));
            }
        }
    }
    for t in clients {
        let _ = t.join();
    }
}
