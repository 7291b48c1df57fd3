use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use log::debug;

use crate::clock::{Clock, SystemClock};
use crate::msgmodel::{peek_schema_id, validate_topic, SchemaId};

use super::queue::Dispatcher;
use super::{
    validate_node_name, BusError, Callback, Delivery, NodeHandle, ParameterValue, Parameters,
    Subscription, TopicInfo, TopicPattern, Transport,
};

pub(crate) type SharedPatterns = Arc<RwLock<Vec<TopicPattern>>>;

#[derive(Default)]
struct NodeEntry {
    params: BTreeMap<String, ParameterValue>,
    status: BTreeMap<String, ParameterValue>,
}

struct SubEntry {
    id: u64,
    patterns: SharedPatterns,
    queue: Arc<super::queue::DeliveryQueue>,
}

struct StreamEntry {
    schema: SchemaId,
    dropped: u64,
}

#[derive(Default)]
struct Routing {
    subs: Vec<SubEntry>,
    topic_schema: HashMap<String, SchemaId>,
    streams: BTreeMap<(String, String), StreamEntry>,
    last_recv_ns: i64,
}

pub(crate) struct BrokerInner {
    clock: Arc<dyn Clock>,
    nodes: Mutex<HashMap<String, NodeEntry>>,
    routing: Mutex<Routing>,
    next_sub: AtomicU64,
}

/// In-process broker. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<BrokerInner>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(SystemClock))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Arc::new(BrokerInner {
                clock,
                nodes: Mutex::new(HashMap::new()),
                routing: Mutex::new(Routing::default()),
                next_sub: AtomicU64::new(0),
            }),
        }
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        Arc::clone(&self.inner.clock)
    }

    pub fn now_ns(&self) -> i64 {
        self.inner.clock.now_ns()
    }

    /// Registers a node; its parameters are queryable immediately.
    pub fn create_node(&self, name: &str, parameters: Parameters) -> Result<NodeHandle, BusError> {
        self.inner.register_node(name, parameters)?;
        Ok(NodeHandle::new(name.to_owned(), Arc::new(LocalTransport(Arc::clone(&self.inner)))))
    }

    pub fn get_parameters(
        &self,
        node: &str,
        names: &[String],
    ) -> Result<Vec<(String, Option<ParameterValue>)>, BusError> {
        self.inner.get_parameters(node, names)
    }

    pub fn list_topics(&self) -> Vec<TopicInfo> {
        self.inner.list()
    }

    pub fn node_names(&self) -> Vec<String> {
        let mut names: Vec<_> = self.inner.nodes.lock().unwrap().keys().cloned().collect();
        names.sort();
        names
    }

    pub(crate) fn inner(&self) -> &Arc<BrokerInner> {
        &self.inner
    }
}

impl BrokerInner {
    pub(crate) fn register_node(&self, name: &str, parameters: Parameters) -> Result<(), BusError> {
        validate_node_name(name)?;
        let mut nodes = self.nodes.lock().unwrap();
        if nodes.contains_key(name) {
            return Err(BusError::DuplicateNodeName(name.to_owned()));
        }
        let entry = NodeEntry { params: parameters.into_iter().collect(), status: BTreeMap::new() };
        nodes.insert(name.to_owned(), entry);
        debug!("node {name} registered");
        Ok(())
    }

    pub(crate) fn unregister_node(&self, name: &str) {
        if self.nodes.lock().unwrap().remove(name).is_some() {
            debug!("node {name} released");
        }
    }

    pub(crate) fn subscribe_shared(
        self: &Arc<Self>,
        node: &str,
        patterns: SharedPatterns,
        callback: Callback,
    ) -> Subscription {
        let id = self.next_sub.fetch_add(1, Ordering::Relaxed);
        let dispatcher = Dispatcher::spawn(format!("sub-{node}-{id}"), callback);
        self.routing.lock().unwrap().subs.push(SubEntry {
            id,
            patterns,
            queue: Arc::clone(dispatcher.queue()),
        });
        let weak = Arc::downgrade(self);
        Subscription::new(move || {
            if let Some(inner) = weak.upgrade() {
                inner.routing.lock().unwrap().subs.retain(|s| s.id != id);
            }
            dispatcher.stop();
        })
    }

    pub(crate) fn publish(&self, publisher: &str, topic: &str, envelope: Arc<[u8]>) -> Result<(), BusError> {
        validate_topic(topic)?;
        let schema = peek_schema_id(&envelope)?;
        let mut routing = self.routing.lock().unwrap();
        if let Some(&existing) = routing.topic_schema.get(topic) {
            if existing != schema {
                return Err(BusError::SchemaMismatch { topic: topic.to_owned(), existing, got: schema });
            }
        } else {
            routing.topic_schema.insert(topic.to_owned(), schema);
        }
        // Receipt times never go backwards, so logs stay ordered.
        let recv_time_ns = self.clock.now_ns().max(routing.last_recv_ns);
        routing.last_recv_ns = recv_time_ns;
        let key = (topic.to_owned(), publisher.to_owned());
        routing.streams.entry(key).or_insert(StreamEntry { schema, dropped: 0 });

        let delivery = Delivery {
            topic: Arc::from(topic),
            envelope,
            recv_time_ns,
            publisher: Arc::from(publisher),
        };
        let mut dropped = Vec::new();
        for sub in &routing.subs {
            let hit = sub.patterns.read().unwrap().iter().any(|p| p.matches(topic));
            if hit {
                if let Some(old) = sub.queue.push(delivery.clone()) {
                    dropped.push(old);
                }
            }
        }
        for old in dropped {
            if let Some(s) = routing.streams.get_mut(&(old.topic.to_string(), old.publisher.to_string())) {
                s.dropped += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn get_parameters(
        &self,
        node: &str,
        names: &[String],
    ) -> Result<Vec<(String, Option<ParameterValue>)>, BusError> {
        let nodes = self.nodes.lock().unwrap();
        let entry = nodes.get(node).ok_or_else(|| BusError::UnknownNode(node.to_owned()))?;
        Ok(names
            .iter()
            .map(|n| {
                let v = entry.params.get(n).or_else(|| entry.status.get(n)).cloned();
                (n.clone(), v)
            })
            .collect())
    }

    pub(crate) fn list(&self) -> Vec<TopicInfo> {
        let routing = self.routing.lock().unwrap();
        routing
            .streams
            .iter()
            .map(|((topic, publisher), s)| TopicInfo {
                topic: topic.clone(),
                schema_id: s.schema,
                publisher: publisher.clone(),
                dropped: s.dropped,
            })
            .collect()
    }
}

/// [`Transport`] view of a local broker.
pub(crate) struct LocalTransport(pub(crate) Arc<BrokerInner>);

impl Transport for LocalTransport {
    fn clock(&self) -> Arc<dyn Clock> {
        Arc::clone(&self.0.clock)
    }

    fn publish_envelope(&self, publisher: &str, topic: &str, envelope: Arc<[u8]>) -> Result<(), BusError> {
        self.0.publish(publisher, topic, envelope)
    }

    fn subscribe(
        &self,
        node: &str,
        patterns: Vec<TopicPattern>,
        callback: Callback,
    ) -> Result<Subscription, BusError> {
        Ok(self.0.subscribe_shared(node, Arc::new(RwLock::new(patterns)), callback))
    }

    fn get_parameters(
        &self,
        node: &str,
        names: &[String],
    ) -> Result<Vec<(String, Option<ParameterValue>)>, BusError> {
        self.0.get_parameters(node, names)
    }

    fn list_topics(&self) -> Result<Vec<TopicInfo>, BusError> {
        Ok(self.0.list())
    }

    fn set_status(&self, node: &str, name: &str, value: ParameterValue) {
        if let Some(entry) = self.0.nodes.lock().unwrap().get_mut(node) {
            if !entry.params.contains_key(name) {
                entry.status.insert(name.to_owned(), value);
            }
        }
    }

    fn release_node(&self, node: &str) {
        self.0.unregister_node(node);
    }
}
