use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::clock::Clock;
use crate::msgmodel::{encode_envelope, validate_topic, Header, Message};

use super::{
    BusError, Delivery, ParameterValue, Subscription, TopicInfo, TopicPattern, Transport,
};

struct NodeInner {
    name: String,
    transport: Arc<dyn Transport>,
    /// Next header seq per topic.
    seqs: Mutex<HashMap<String, u64>>,
}

impl Drop for NodeInner {
    fn drop(&mut self) {
        self.transport.release_node(&self.name);
    }
}

/// A registered node. Clones share the registration; the node is released
/// when the last clone is dropped.
#[derive(Clone)]
pub struct NodeHandle {
    inner: Arc<NodeInner>,
}

impl fmt::Debug for NodeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeHandle").field("name", &self.inner.name).finish()
    }
}

impl NodeHandle {
    pub(crate) fn new(name: String, transport: Arc<dyn Transport>) -> Self {
        Self { inner: Arc::new(NodeInner { name, transport, seqs: Mutex::new(HashMap::new()) }) }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.inner.transport.clock()
    }

    pub fn now_ns(&self) -> i64 {
        self.inner.transport.clock().now_ns()
    }

    /// Publishes `msg` on `topic`. The header is filled in here: `seq` counts
    /// per topic from 0, `stamp_ns` is the current bus time and `source` the
    /// node name. Returns the header that was sent.
    pub fn publish(&self, topic: &str, msg: impl Into<Message>) -> Result<Header, BusError> {
        validate_topic(topic)?;
        let mut msg = msg.into();
        let mut seqs = self.inner.seqs.lock().unwrap();
        let seq = seqs.get(topic).copied().unwrap_or(0);
        let source = self.inner.name.chars().take(crate::msgmodel::MAX_SHORT_STRING).collect();
        *msg.header_mut() = Header { seq, stamp_ns: self.now_ns().max(0), source };
        let bytes = encode_envelope(&msg)?;
        self.inner.transport.publish_envelope(&self.inner.name, topic, Arc::from(bytes))?;
        seqs.insert(topic.to_owned(), seq + 1);
        Ok(msg.header().clone())
    }

    /// Forwards already-encoded envelope bytes unmodified.
    pub fn publish_envelope(&self, topic: &str, envelope: Arc<[u8]>) -> Result<(), BusError> {
        validate_topic(topic)?;
        self.inner.transport.publish_envelope(&self.inner.name, topic, envelope)
    }

    pub fn subscribe<F>(&self, pattern: &str, callback: F) -> Result<Subscription, BusError>
    where
        F: FnMut(&Delivery) + Send + 'static,
    {
        self.subscribe_many(&[pattern], callback)
    }

    /// One subscription over several patterns: each message is delivered
    /// once even if several patterns match, in broker receipt order.
    pub fn subscribe_many<S, F>(&self, patterns: &[S], callback: F) -> Result<Subscription, BusError>
    where
        S: AsRef<str>,
        F: FnMut(&Delivery) + Send + 'static,
    {
        let parsed = patterns
            .iter()
            .map(|p| TopicPattern::parse(p.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        self.inner.transport.subscribe(&self.inner.name, parsed, Box::new(callback))
    }

    pub fn get_parameters<S: AsRef<str>>(
        &self,
        node: &str,
        names: &[S],
    ) -> Result<Vec<(String, Option<ParameterValue>)>, BusError> {
        let names: Vec<String> = names.iter().map(|n| n.as_ref().to_owned()).collect();
        self.inner.transport.get_parameters(node, &names)
    }

    pub fn get_parameter(&self, node: &str, name: &str) -> Result<Option<ParameterValue>, BusError> {
        Ok(self.get_parameters(node, &[name])?.pop().and_then(|(_, v)| v))
    }

    pub fn list_topics(&self) -> Result<Vec<TopicInfo>, BusError> {
        self.inner.transport.list_topics()
    }

    /// Updates a read-only runtime value queryable like a parameter.
    /// Static parameters cannot be overwritten.
    pub fn set_status(&self, name: &str, value: impl Into<ParameterValue>) {
        self.inner.transport.set_status(&self.inner.name, name, value.into());
    }
}
