//! One WebSocket client connection.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::Ordering;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, info, warn};
use physiobus::bus::{ParameterValue, Subscription};
use physiobus::msgmodel::json::delivery_to_json;
use physiobus::msgmodel::{DeviceFeature, SchemaId};
use physiobus::recorder::record;
use serde_json::{json, Map, Value};
use tungstenite::{Message as WsMessage, WebSocket};

use crate::decimate::Decimator;
use crate::{Shared, EVENTS_TOPIC};

const POLL: Duration = Duration::from_millis(10);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

struct Outgoing {
    subscription: u64,
    topic: String,
    raw: bool,
    text: String,
}

struct Client {
    shared: Arc<Shared>,
    tx: Sender<Outgoing>,
    subscriptions: HashMap<String, (u64, Subscription)>,
    decimators: HashMap<u64, Decimator>,
    retired_dropped: u64,
    next_subscription: u64,
}

type Reply = Result<Map<String, Value>, String>;

pub(crate) fn run(stream: TcpStream, peer: SocketAddr, shared: Arc<Shared>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT));
    let _ = stream.set_nodelay(true);
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!("bridge handshake with {peer} failed: {e}");
            return;
        }
    };
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    info!("bridge client {peer} connected");
    let (tx, rx) = mpsc::channel();
    let mut client = Client {
        shared,
        tx,
        subscriptions: HashMap::new(),
        decimators: HashMap::new(),
        retired_dropped: 0,
        next_subscription: 0,
    };
    if let Err(e) = client.serve(&mut ws, &rx) {
        debug!("bridge client {peer}: {e}");
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    info!("bridge client {peer} disconnected");
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

impl Client {
    fn serve(&mut self, ws: &mut WebSocket<TcpStream>, rx: &Receiver<Outgoing>) -> Result<(), tungstenite::Error> {
        while !self.shared.stop.load(Ordering::Acquire) {
            match ws.read() {
                Ok(WsMessage::Text(text)) => {
                    let reply = self.handle(&text);
                    ws.send(WsMessage::Text(reply.to_string()))?;
                }
                Ok(WsMessage::Binary(_)) => {
                    ws.send(WsMessage::Text(error_reply(None, None, "binary frames are not supported").to_string()))?;
                }
                Ok(WsMessage::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(e) if is_timeout(&e) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(e),
            }
            self.forward(ws, rx)?;
        }
        Ok(())
    }

    /// Sends queued bus messages, rate-limiting raw streams.
    fn forward(&mut self, ws: &mut WebSocket<TcpStream>, rx: &Receiver<Outgoing>) -> Result<(), tungstenite::Error> {
        let now = self.shared.node.now_ns();
        for out in rx.try_iter() {
            if !self.decimators.contains_key(&out.subscription) {
                // Unsubscribed since the message was queued.
                continue;
            }
            let text = if out.raw {
                let d = self.decimators.get_mut(&out.subscription).expect("checked");
                match d.offer(&out.topic, now, out.text) {
                    Some(t) => t,
                    None => continue,
                }
            } else {
                out.text
            };
            ws.write(WsMessage::Text(text))?;
        }
        for d in self.decimators.values_mut() {
            for text in d.due(now) {
                ws.write(WsMessage::Text(text))?;
            }
        }
        match ws.flush() {
            Err(e) if is_timeout(&e) => Ok(()),
            other => other,
        }
    }

    fn handle(&mut self, text: &str) -> Value {
        let request: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return error_reply(None, None, &format!("malformed JSON: {e}")),
        };
        let Some(obj) = request.as_object() else {
            return error_reply(None, None, "request must be a JSON object");
        };
        let id = obj.get("id").cloned();
        let Some(op) = obj.get("op").and_then(Value::as_str) else {
            return error_reply(id, None, "missing \"op\"");
        };
        let result = match op {
            "subscribe" => self.subscribe(obj),
            "unsubscribe" => self.unsubscribe(obj),
            "list" => self.list(),
            "param_get" => self.param_get(obj),
            "record_start" => self.record_start(obj),
            "record_stop" => self.record_stop(),
            "annotate" => self.annotate(obj),
            other => Err(format!("unknown op {other:?}")),
        };
        match result {
            Ok(mut fields) => {
                let mut reply = Map::new();
                reply.insert("op".into(), "status".into());
                reply.insert("request".into(), op.into());
                if let Some(id) = id {
                    reply.insert("id".into(), id);
                }
                reply.append(&mut fields);
                Value::Object(reply)
            }
            Err(message) => error_reply(id, Some(op), &message),
        }
    }

    fn subscribe(&mut self, req: &Map<String, Value>) -> Reply {
        let pattern = str_field(req, "pattern")?;
        if !self.subscriptions.contains_key(pattern) {
            let id = self.next_subscription;
            self.next_subscription += 1;
            let tx = self.tx.clone();
            let sub = self
                .shared
                .node
                .subscribe(pattern, move |d| {
                    let msg = match d.decode() {
                        Ok(m) => m,
                        Err(e) => {
                            warn!("bridge: undecodable message on {}: {e}", d.topic);
                            return;
                        }
                    };
                    let mut obj = delivery_to_json(&d.topic, d.recv_time_ns, &msg);
                    obj.insert("op".into(), "msg".into());
                    let _ = tx.send(Outgoing {
                        subscription: id,
                        topic: d.topic.to_string(),
                        raw: msg.schema_id() == SchemaId::PhysioRaw,
                        text: Value::Object(obj).to_string(),
                    });
                })
                .map_err(|e| e.to_string())?;
            self.decimators.insert(id, Decimator::default());
            self.subscriptions.insert(pattern.to_owned(), (id, sub));
        }
        Ok(fields([("pattern", pattern.into()), ("subscriptions", self.subscriptions.len().into())]))
    }

    fn unsubscribe(&mut self, req: &Map<String, Value>) -> Reply {
        let pattern = str_field(req, "pattern")?;
        let Some((id, sub)) = self.subscriptions.remove(pattern) else {
            return Err(format!("not subscribed to {pattern:?}"));
        };
        sub.unsubscribe();
        // Keep the drop count of the closed subscription in the total.
        self.retired_dropped += self.decimators.remove(&id).map_or(0, |d| d.dropped());
        Ok(fields([("pattern", pattern.into()), ("subscriptions", self.subscriptions.len().into())]))
    }

    fn list(&mut self) -> Reply {
        let topics = self.shared.node.list_topics().map_err(|e| e.to_string())?;
        let topics: Vec<Value> = topics
            .into_iter()
            .map(|t| {
                json!({
                    "topic": t.topic,
                    "schema": t.schema_id.name(),
                    "publisher": t.publisher,
                    "dropped": t.dropped,
                })
            })
            .collect();
        let decimated = self.retired_dropped + self.decimators.values().map(Decimator::dropped).sum::<u64>();
        Ok(fields([("topics", Value::Array(topics)), ("decimated", decimated.into())]))
    }

    fn param_get(&mut self, req: &Map<String, Value>) -> Reply {
        let node = str_field(req, "node")?;
        let name = str_field(req, "name")?;
        let value = self.shared.node.get_parameter(node, name).map_err(|e| e.to_string())?;
        let value = value.as_ref().map_or(Value::Null, param_json);
        Ok(fields([("node", node.into()), ("name", name.into()), ("value", value)]))
    }

    fn record_start(&mut self, req: &Map<String, Value>) -> Reply {
        let path = str_field(req, "path")?;
        let patterns: Vec<String> = match req.get("patterns") {
            None => vec!["/**".to_owned()],
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_owned).ok_or("patterns must be strings"))
                .collect::<Result<_, _>>()?,
            Some(_) => return Err("\"patterns\" must be an array of strings".into()),
        };
        let mut slot = self.shared.recording.lock().unwrap();
        if let Some(active) = slot.as_ref() {
            return Err(format!("a recording to {} is already active", active.path().display()));
        }
        let session = record(&self.shared.node, &patterns, path).map_err(|e| e.to_string())?;
        let started = session.started_ns();
        *slot = Some(session);
        Ok(fields([
            ("path", path.into()),
            ("patterns", patterns.into()),
            ("started_ns", started.into()),
        ]))
    }

    fn record_stop(&mut self) -> Reply {
        let session = self.shared.recording.lock().unwrap().take().ok_or("no active recording")?;
        // Let deliveries already accepted by the broker reach the file.
        std::thread::sleep(Duration::from_millis(50));
        let s = session.stop(self.shared.node.now_ns()).map_err(|e| e.to_string())?;
        Ok(fields([
            ("path", s.path.display().to_string().into()),
            ("records", s.records.into()),
            ("started_ns", s.started_ns.into()),
            ("stopped_ns", s.stopped_ns.into()),
        ]))
    }

    fn annotate(&mut self, req: &Map<String, Value>) -> Reply {
        let label = str_field(req, "label")?;
        let value = match req.get("value") {
            None => 0.0,
            Some(v) => v.as_f64().ok_or("\"value\" must be a number")?,
        };
        let now = self.shared.node.now_ns();
        let event = DeviceFeature { device_timestamp_ns: now, name: label.to_owned(), value, ..Default::default() };
        self.shared.node.publish(EVENTS_TOPIC, event).map_err(|e| e.to_string())?;
        Ok(fields([("label", label.into()), ("topic", EVENTS_TOPIC.into()), ("bus_time_ns", now.into())]))
    }
}

fn fields<const N: usize>(items: [(&str, Value); N]) -> Map<String, Value> {
    items.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

fn str_field<'a>(req: &'a Map<String, Value>, key: &str) -> Result<&'a str, String> {
    req.get(key).and_then(Value::as_str).ok_or_else(|| format!("missing string field {key:?}"))
}

fn param_json(v: &ParameterValue) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn error_reply(id: Option<Value>, request: Option<&str>, message: &str) -> Value {
    let mut obj = Map::new();
    obj.insert("op".into(), "error".into());
    if let Some(r) = request {
        obj.insert("request".into(), r.into());
    }
    if let Some(id) = id {
        obj.insert("id".into(), id);
    }
    obj.insert("message".into(), message.into());
    Value::Object(obj)
}
