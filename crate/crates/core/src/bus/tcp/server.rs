use std::io::{BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use crate::bus::broker::{BrokerInner, SharedPatterns};
use crate::bus::{Broker, BusError, TopicPattern};
use crate::msgmodel::decode_envelope;

use super::frame::{read_frame, read_magic, write_magic, Frame, FrameError, ParamStatus};

/// A broker listening for remote nodes.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes every connection.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        self.stop.store(true, Ordering::Release);
        for c in self.conns.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.close();
    }
}

/// Serves `broker` on `addr`; each connection is one remote node.
pub fn serve_tcp(broker: &Broker, addr: impl ToSocketAddrs) -> Result<TcpServer, BusError> {
    let listener = TcpListener::bind(addr).map_err(BusError::Bind)?;
    let local = listener.local_addr().map_err(BusError::Bind)?;
    listener.set_nonblocking(true).map_err(BusError::Bind)?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
    let inner = Arc::clone(broker.inner());
    let accept = {
        let stop = Arc::clone(&stop);
        let conns = Arc::clone(&conns);
        thread::Builder::new()
            .name("tcp-accept".into())
            .spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            let _ = stream.set_nonblocking(false);
                            let _ = stream.set_nodelay(true);
                            if let Ok(c) = stream.try_clone() {
                                let mut list = conns.lock().unwrap();
                                list.retain(|s| s.peer_addr().is_ok());
                                list.push(c);
                            }
                            let inner = Arc::clone(&inner);
                            let _ = thread::Builder::new()
                                .name(format!("tcp-conn-{peer}"))
                                .spawn(move || serve_connection(inner, stream, peer));
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            thread::sleep(Duration::from_millis(10));
                        }
                        Err(e) => {
                            warn!("accept failed: {e}");
                            thread::sleep(Duration::from_millis(10));
                        }
                    }
                }
            })
            .expect("spawn accept thread")
    };
    info!("broker listening on {local}");
    Ok(TcpServer { addr: local, stop, conns, accept: Some(accept) })
}

fn serve_connection(inner: Arc<BrokerInner>, stream: TcpStream, peer: SocketAddr) {
    let writer = match stream.try_clone() {
        Ok(w) => Arc::new(Mutex::new(w)),
        Err(e) => {
            warn!("{peer}: {e}");
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    let node = match handshake(&inner, &mut reader, &writer) {
        Ok(node) => node,
        Err(e) => {
            warn!("{peer}: handshake failed: {e}");
            let _ = writer.lock().unwrap().shutdown(Shutdown::Both);
            return;
        }
    };
    debug!("{peer}: node {node} connected");

    let patterns: SharedPatterns = Arc::new(RwLock::new(Vec::new()));
    let sub = {
        let writer = Arc::clone(&writer);
        inner.subscribe_shared(
            &node,
            Arc::clone(&patterns),
            Box::new(move |d| {
                let frame = Frame::Msg {
                    topic: d.topic.to_string(),
                    publisher: d.publisher.to_string(),
                    envelope: d.envelope.to_vec(),
                };
                let _ = writer.lock().unwrap().write_all(&frame.encode());
            }),
        )
    };

    let result = serve_frames(&inner, &node, &mut reader, &writer, &patterns);
    match result {
        Ok(()) => debug!("{peer}: node {node} disconnected"),
        Err(e) => warn!("{peer}: node {node}: protocol error: {e}"),
    }
    drop(sub);
    inner.unregister_node(&node);
    let _ = writer.lock().unwrap().shutdown(Shutdown::Both);
}

fn handshake(
    inner: &BrokerInner,
    reader: &mut BufReader<TcpStream>,
    writer: &Mutex<TcpStream>,
) -> Result<String, BusError> {
    let proto = |e: FrameError| BusError::Protocol(e.to_string());
    read_magic(reader).map_err(proto)?;
    let Some(Frame::Hello { node, params }) = read_frame(reader).map_err(proto)? else {
        return Err(BusError::Protocol("first frame must be HELLO".into()));
    };
    inner.register_node(&node, params)?;
    let mut w = writer.lock().unwrap();
    let ack = Frame::Hello { node: node.clone(), params: Vec::new() };
    if let Err(e) = write_magic(&mut *w).and_then(|()| w.write_all(&ack.encode())) {
        drop(w);
        inner.unregister_node(&node);
        return Err(BusError::Protocol(e.to_string()));
    }
    Ok(node)
}

fn serve_frames(
    inner: &BrokerInner,
    node: &str,
    reader: &mut BufReader<TcpStream>,
    writer: &Mutex<TcpStream>,
    patterns: &SharedPatterns,
) -> Result<(), BusError> {
    let send = |f: Frame| -> Result<(), BusError> {
        writer.lock().unwrap().write_all(&f.encode()).map_err(|_| BusError::Disconnected)
    };
    loop {
        let frame = match read_frame(reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(FrameError::Io(_)) => return Ok(()),
            Err(e) => return Err(BusError::Protocol(e.to_string())),
        };
        match frame {
            Frame::Sub(p) => {
                let pattern = TopicPattern::parse(&p)?;
                patterns.write().unwrap().push(pattern);
            }
            Frame::Unsub(p) => {
                let pattern = TopicPattern::parse(&p)?;
                let mut list = patterns.write().unwrap();
                if let Some(i) = list.iter().position(|q| *q == pattern) {
                    list.remove(i);
                }
            }
            Frame::Msg { topic, envelope, .. } => {
                decode_envelope(&envelope)?;
                inner.publish(node, &topic, Arc::from(envelope))?;
            }
            Frame::ParamReq { corr_id, node: target, names } => {
                let reply = match inner.get_parameters(&target, &names) {
                    Ok(entries) => Frame::ParamRep { corr_id, status: ParamStatus::Ok, entries },
                    Err(_) => Frame::ParamRep { corr_id, status: ParamStatus::UnknownNode, entries: Vec::new() },
                };
                send(reply)?;
            }
            Frame::ListReq { corr_id } => send(Frame::ListRep { corr_id, entries: inner.list() })?,
            other => {
                return Err(BusError::Protocol(format!("unexpected frame from client: {other:?}")));
            }
        }
    }
}
