//! Publish/subscribe broker with a node registry and a parameter service.
//!
//! [`Broker`] is the in-process implementation; [`tcp`] exposes it to other
//! processes. Nodes talk to either through a [`NodeHandle`].

mod broker;
mod node;
mod pattern;
mod queue;
pub mod tcp;

use std::fmt;
use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::msgmodel::{
    decode_envelope, peek_schema_id, DecodeError, InvariantViolation, Message, SchemaId,
    TopicError,
};

pub use broker::Broker;
pub use node::NodeHandle;
pub use pattern::TopicPattern;
pub use queue::QUEUE_SOFT_LIMIT;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("node name {0:?} is already registered")]
    DuplicateNodeName(String),
    #[error("node name {0:?} is not a [a-z0-9_]+ token")]
    InvalidNodeName(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error(transparent)]
    InvalidTopic(#[from] TopicError),
    #[error("invalid pattern {0}")]
    InvalidPattern(String),
    #[error("encoding error: {0}")]
    Encoding(#[from] InvariantViolation),
    #[error("undecodable envelope: {0}")]
    Decode(#[from] DecodeError),
    #[error("topic {topic} carries {existing}, cannot publish {got}")]
    SchemaMismatch { topic: String, existing: SchemaId, got: SchemaId },
    #[error("bind error: {0}")]
    Bind(io::Error),
    #[error("connect error: {0}")]
    Connect(io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection closed")]
    Disconnected,
}

/// Static node metadata value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParameterValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParameterValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParameterValue::Float(v) => Some(*v),
            ParameterValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParameterValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParameterValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParameterValue::Bool(v) => write!(f, "{v}"),
            ParameterValue::Int(v) => write!(f, "{v}"),
            ParameterValue::Float(v) => write!(f, "{v:?}"),
            ParameterValue::Str(v) => f.write_str(v),
        }
    }
}

impl From<f64> for ParameterValue {
    fn from(v: f64) -> Self {
        ParameterValue::Float(v)
    }
}
impl From<i64> for ParameterValue {
    fn from(v: i64) -> Self {
        ParameterValue::Int(v)
    }
}
impl From<bool> for ParameterValue {
    fn from(v: bool) -> Self {
        ParameterValue::Bool(v)
    }
}
impl From<&str> for ParameterValue {
    fn from(v: &str) -> Self {
        ParameterValue::Str(v.to_owned())
    }
}
impl From<String> for ParameterValue {
    fn from(v: String) -> Self {
        ParameterValue::Str(v)
    }
}

pub type Parameters = Vec<(String, ParameterValue)>;

/// One message as handed to a subscriber.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub topic: Arc<str>,
    pub envelope: Arc<[u8]>,
    /// Bus time at which the broker accepted the message.
    pub recv_time_ns: i64,
    /// Name of the publishing node.
    pub publisher: Arc<str>,
}

impl Delivery {
    pub fn decode(&self) -> Result<Message, DecodeError> {
        decode_envelope(&self.envelope)
    }

    pub fn schema_id(&self) -> Option<SchemaId> {
        peek_schema_id(&self.envelope).ok()
    }
}

/// One `(topic, publisher)` stream seen since the broker started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicInfo {
    pub topic: String,
    pub schema_id: SchemaId,
    pub publisher: String,
    /// Messages of this stream dropped from full subscriber queues.
    pub dropped: u64,
}

pub type Callback = Box<dyn FnMut(&Delivery) + Send + 'static>;

/// Live subscription; delivery stops when it is dropped.
pub struct Subscription {
    cancel: Option<Box<dyn FnOnce() + Send>>,
}

impl Subscription {
    pub(crate) fn new(cancel: impl FnOnce() + Send + 'static) -> Self {
        Self { cancel: Some(Box::new(cancel)) }
    }

    pub fn unsubscribe(mut self) {
        if let Some(cancel) = self.cancel.take() {
            cancel();
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(cancel) = self.cancel.take() {
            cancel();
        }
    }
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription").field("active", &self.cancel.is_some()).finish()
    }
}

/// What a node needs from the middleware, local or remote.
pub trait Transport: Send + Sync {
    fn clock(&self) -> Arc<dyn Clock>;
    fn publish_envelope(&self, publisher: &str, topic: &str, envelope: Arc<[u8]>) -> Result<(), BusError>;
    fn subscribe(
        &self,
        node: &str,
        patterns: Vec<TopicPattern>,
        callback: Callback,
    ) -> Result<Subscription, BusError>;
    fn get_parameters(
        &self,
        node: &str,
        names: &[String],
    ) -> Result<Vec<(String, Option<ParameterValue>)>, BusError>;
    fn list_topics(&self) -> Result<Vec<TopicInfo>, BusError>;
    /// Publishes a read-only runtime snapshot next to the node's parameters.
    fn set_status(&self, node: &str, name: &str, value: ParameterValue);
    fn release_node(&self, node: &str);
}

pub(crate) fn validate_node_name(name: &str) -> Result<(), BusError> {
    if crate::msgmodel::topic_is_token(name) {
        Ok(())
    } else {
        Err(BusError::InvalidNodeName(name.to_owned()))
    }
}
