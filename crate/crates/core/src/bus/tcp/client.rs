use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use crate::bus::queue::{DeliveryQueue, Dispatcher};
use crate::bus::{
    validate_node_name, BusError, Callback, Delivery, NodeHandle, ParameterValue, Parameters,
    Subscription, TopicInfo, TopicPattern, Transport,
};
use crate::clock::{Clock, SystemClock};

use super::frame::{read_frame, read_magic, write_magic, Frame, ParamStatus};

const REPLY_TIMEOUT: Duration = Duration::from_secs(10);

struct RemoteSub {
    id: u64,
    patterns: Vec<TopicPattern>,
    queue: Arc<DeliveryQueue>,
}

struct Remote {
    writer: Mutex<TcpStream>,
    clock: Arc<dyn Clock>,
    subs: Mutex<Vec<RemoteSub>>,
    /// Subscriptions per pattern string; SUB/UNSUB are sent on 0↔1 edges.
    pattern_refs: Mutex<HashMap<String, usize>>,
    pending: Mutex<HashMap<u32, Sender<Frame>>>,
    next_corr: AtomicU32,
    next_sub: AtomicU64,
    closed: AtomicBool,
}

/// Connects to a broker served with [`super::serve_tcp`] and registers
/// `node_name` there. The registration lives as long as the connection.
pub fn connect_tcp(
    addr: impl ToSocketAddrs,
    node_name: &str,
    parameters: Parameters,
) -> Result<NodeHandle, BusError> {
    validate_node_name(node_name)?;
    let mut stream = TcpStream::connect(addr).map_err(BusError::Connect)?;
    let _ = stream.set_nodelay(true);
    write_magic(&mut stream).map_err(BusError::Connect)?;
    let hello = Frame::Hello { node: node_name.to_owned(), params: parameters };
    stream.write_all(&hello.encode()).map_err(BusError::Connect)?;

    let mut reader = BufReader::new(stream.try_clone().map_err(BusError::Connect)?);
    // The broker closes the connection instead of acknowledging when the
    // name is taken.
    if read_magic(&mut reader).is_err() {
        return Err(BusError::DuplicateNodeName(node_name.to_owned()));
    }
    match read_frame(&mut reader) {
        Ok(Some(Frame::Hello { .. })) => {}
        Ok(None) | Err(_) => return Err(BusError::DuplicateNodeName(node_name.to_owned())),
        Ok(Some(other)) => return Err(BusError::Protocol(format!("expected HELLO ack, got {other:?}"))),
    }

    let remote = Arc::new(Remote {
        writer: Mutex::new(stream),
        clock: Arc::new(SystemClock),
        subs: Mutex::new(Vec::new()),
        pattern_refs: Mutex::new(HashMap::new()),
        pending: Mutex::new(HashMap::new()),
        next_corr: AtomicU32::new(1),
        next_sub: AtomicU64::new(0),
        closed: AtomicBool::new(false),
    });
    {
        let remote = Arc::clone(&remote);
        thread::Builder::new()
            .name(format!("tcp-client-{node_name}"))
            .spawn(move || remote.read_loop(reader))
            .expect("spawn client reader");
    }
    Ok(NodeHandle::new(node_name.to_owned(), Arc::new(RemoteTransport(remote))))
}

impl Remote {
    fn send(&self, frame: &Frame) -> Result<(), BusError> {
        if self.closed.load(Ordering::Acquire) {
            return Err(BusError::Disconnected);
        }
        self.writer.lock().unwrap().write_all(&frame.encode()).map_err(|_| BusError::Disconnected)
    }

    fn request(&self, make: impl FnOnce(u32) -> Frame) -> Result<Frame, BusError> {
        let corr = self.next_corr.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(corr, tx);
        if let Err(e) = self.send(&make(corr)) {
            self.pending.lock().unwrap().remove(&corr);
            return Err(e);
        }
        let reply = rx.recv_timeout(REPLY_TIMEOUT).map_err(|_| BusError::Disconnected);
        self.pending.lock().unwrap().remove(&corr);
        reply
    }

    fn read_loop(&self, mut reader: BufReader<TcpStream>) {
        loop {
            match read_frame(&mut reader) {
                Ok(Some(Frame::Msg { topic, publisher, envelope })) => {
                    let delivery = Delivery {
                        topic: Arc::from(topic.as_str()),
                        envelope: Arc::from(envelope),
                        recv_time_ns: self.clock.now_ns(),
                        publisher: Arc::from(publisher),
                    };
                    for sub in self.subs.lock().unwrap().iter() {
                        if sub.patterns.iter().any(|p| p.matches(&topic)) {
                            sub.queue.push(delivery.clone());
                        }
                    }
                }
                Ok(Some(reply @ (Frame::ParamRep { .. } | Frame::ListRep { .. }))) => {
                    let corr = match &reply {
                        Frame::ParamRep { corr_id, .. } | Frame::ListRep { corr_id, .. } => *corr_id,
                        _ => unreachable!(),
                    };
                    if let Some(tx) = self.pending.lock().unwrap().remove(&corr) {
                        let _ = tx.send(reply);
                    }
                }
                Ok(Some(other)) => {
                    warn!("unexpected frame from broker: {other:?}");
                    break;
                }
                Ok(None) => break,
                Err(e) => {
                    debug!("broker connection ended: {e}");
                    break;
                }
            }
        }
        self.closed.store(true, Ordering::Release);
        self.pending.lock().unwrap().clear();
    }
}

struct RemoteTransport(Arc<Remote>);

impl Transport for RemoteTransport {
    fn clock(&self) -> Arc<dyn Clock> {
        Arc::clone(&self.0.clock)
    }

    fn publish_envelope(&self, publisher: &str, topic: &str, envelope: Arc<[u8]>) -> Result<(), BusError> {
        self.0.send(&Frame::Msg {
            topic: topic.to_owned(),
            publisher: publisher.to_owned(),
            envelope: envelope.to_vec(),
        })
    }

    fn subscribe(
        &self,
        node: &str,
        patterns: Vec<TopicPattern>,
        callback: Callback,
    ) -> Result<Subscription, BusError> {
        let remote = &self.0;
        let id = remote.next_sub.fetch_add(1, Ordering::Relaxed);
        let dispatcher = Dispatcher::spawn(format!("rsub-{node}-{id}"), callback);
        let keys: Vec<String> = patterns.iter().map(|p| p.to_string()).collect();
        remote.subs.lock().unwrap().push(RemoteSub {
            id,
            patterns,
            queue: Arc::clone(dispatcher.queue()),
        });
        {
            let mut refs = remote.pattern_refs.lock().unwrap();
            for k in &keys {
                let n = refs.entry(k.clone()).or_insert(0);
                *n += 1;
                if *n == 1 {
                    remote.send(&Frame::Sub(k.clone()))?;
                }
            }
        }
        let weak = Arc::downgrade(remote);
        Ok(Subscription::new(move || {
            if let Some(remote) = weak.upgrade() {
                remote.subs.lock().unwrap().retain(|s| s.id != id);
                let mut refs = remote.pattern_refs.lock().unwrap();
                for k in keys {
                    if let Some(n) = refs.get_mut(&k) {
                        *n -= 1;
                        if *n == 0 {
                            refs.remove(&k);
                            let _ = remote.send(&Frame::Unsub(k));
                        }
                    }
                }
            }
            dispatcher.stop();
        }))
    }

    fn get_parameters(
        &self,
        node: &str,
        names: &[String],
    ) -> Result<Vec<(String, Option<ParameterValue>)>, BusError> {
        let reply = self.0.request(|corr_id| Frame::ParamReq {
            corr_id,
            node: node.to_owned(),
            names: names.to_vec(),
        })?;
        match reply {
            Frame::ParamRep { status: ParamStatus::Ok, entries, .. } => Ok(entries),
            Frame::ParamRep { status: ParamStatus::UnknownNode, .. } => {
                Err(BusError::UnknownNode(node.to_owned()))
            }
            other => Err(BusError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    fn list_topics(&self) -> Result<Vec<TopicInfo>, BusError> {
        match self.0.request(|corr_id| Frame::ListReq { corr_id })? {
            Frame::ListRep { entries, .. } => Ok(entries),
            other => Err(BusError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    fn set_status(&self, node: &str, name: &str, _value: ParameterValue) {
        // The wire protocol has no frame for runtime snapshots.
        debug!("status {name} of remote node {node} is not exported");
    }

    fn release_node(&self, _node: &str) {
        self.0.closed.store(true, Ordering::Release);
        let _ = self.0.writer.lock().unwrap().shutdown(Shutdown::Both);
    }
}
