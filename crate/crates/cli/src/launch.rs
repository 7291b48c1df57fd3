//! Launch configuration: a JSON list of nodes to start together.
//!
//! Parsing checks every entry (kind, ids, parameters) before anything is
//! started, so a bad config never leaves half a graph running.

use std::path::{Path, PathBuf};

use log::info;
use physiobus::drivers::{run_ecg_driver, run_ppg_driver, run_replay_driver, EcgSimConfig, PpgSimConfig};
use physiobus::fusion::{run_fusion_node, FusionConfig};
use physiobus::interpreters::{run_ecg_interpreter, run_ppg_interpreter, InterpreterConfig};
use physiobus::msgmodel::topic_is_token;
use physiobus::recorder::list_log;
use physiobus::{Bus, RunningNode};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::expression_script::{run_expression_script, ExpressionScriptConfig};

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid launch config: {0}")]
    Config(String),
    #[error("node {index} ({kind}): {message}")]
    Node { index: usize, kind: &'static str, message: String },
    #[error("starting node {index} ({kind}) failed: {message}")]
    Start { index: usize, kind: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    EcgDriver,
    PpgDriver,
    EcgInterpreter,
    PpgInterpreter,
    Fusion,
    ExpressionScript,
    Replay,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::EcgDriver => "ecg_driver",
            NodeKind::PpgDriver => "ppg_driver",
            NodeKind::EcgInterpreter => "ecg_interpreter",
            NodeKind::PpgInterpreter => "ppg_interpreter",
            NodeKind::Fusion => "fusion",
            NodeKind::ExpressionScript => "expression_script",
            NodeKind::Replay => "replay",
        }
    }

    fn needs_sensor_id(self) -> bool {
        matches!(self, NodeKind::EcgDriver | NodeKind::PpgDriver | NodeKind::EcgInterpreter | NodeKind::PpgInterpreter)
    }
}

/// One entry of the `nodes` array, before its parameters are checked.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub kind: NodeKind,
    #[serde(default)]
    pub human_id: Option<String>,
    #[serde(default)]
    pub sensor_id: Option<String>,
    /// Overrides the default node name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayParams {
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_rate() -> f64 {
    1.0
}

/// A checked node, ready to start.
#[derive(Debug, Clone)]
pub enum NodePlan {
    EcgDriver { human_id: String, sensor_id: String, config: EcgSimConfig },
    PpgDriver { human_id: String, sensor_id: String, config: PpgSimConfig },
    EcgInterpreter { human_id: String, sensor_id: String, config: InterpreterConfig },
    PpgInterpreter { human_id: String, sensor_id: String, config: InterpreterConfig },
    Fusion { config: FusionConfig },
    ExpressionScript { human_id: String, config: ExpressionScriptConfig },
    Replay { params: ReplayParams },
}

#[derive(Debug, Clone)]
pub struct PlannedNode {
    pub kind: NodeKind,
    pub name: Option<String>,
    pub plan: NodePlan,
}

#[derive(Debug, Clone)]
pub struct LaunchConfig {
    pub nodes: Vec<PlannedNode>,
}

impl LaunchConfig {
    /// Reads and checks a config file.
    pub fn load(path: &Path) -> Result<Self, LaunchError> {
        let text = std::fs::read_to_string(path).map_err(|source| LaunchError::Read { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative replay paths are taken from `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, LaunchError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| LaunchError::Config(e.to_string()))?;
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for (index, entry) in raw.nodes.into_iter().enumerate() {
            let kind = entry.kind;
            let node_err = |message: String| LaunchError::Node { index, kind: kind.as_str(), message };
            nodes.push(plan_node(entry, base_dir).map_err(node_err)?);
        }
        let mut names: Vec<&str> = nodes.iter().filter_map(|n| n.name.as_deref()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(LaunchError::Config(format!("node name {:?} used twice", w[0])));
        }
        Ok(Self { nodes })
    }

    /// Starts every node in order. On failure the nodes already started are
    /// stopped again.
    pub fn start(&self, bus: &dyn Bus) -> Result<Vec<RunningNode>, LaunchError> {
        let mut running = Vec::with_capacity(self.nodes.len());
        for (index, node) in self.nodes.iter().enumerate() {
            let started = start_node(bus, node).map_err(|message| LaunchError::Start {
                index,
                kind: node.kind.as_str(),
                message,
            })?;
            info!("started {} ({})", started.name(), node.kind.as_str());
            running.push(started);
        }
        Ok(running)
    }
}

fn params<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, String> {
    serde_json::from_value(Value::Object(map)).map_err(|e| format!("params: {e}"))
}

fn token(field: &str, v: Option<String>) -> Result<String, String> {
    match v {
        None => Err(format!("missing {field}")),
        Some(s) if topic_is_token(&s) => Ok(s),
        Some(s) => Err(format!("{field} {s:?} is not a topic token")),
    }
}

fn plan_node(entry: NodeEntry, base_dir: &Path) -> Result<PlannedNode, String> {
    let kind = entry.kind;
    if let Some(name) = &entry.name {
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
            return Err(format!("name {name:?} must match [a-z0-9_]+"));
        }
    }
    let sensor_id = if kind.needs_sensor_id() { Some(token("sensor_id", entry.sensor_id)?) } else { None };
    let human_id = || token("human_id", entry.human_id.clone());
    let plan = match kind {
        NodeKind::EcgDriver => {
            let config: EcgSimConfig = params(entry.params)?;
            config.synth().map_err(|e| e.to_string())?;
            NodePlan::EcgDriver { human_id: human_id()?, sensor_id: sensor_id.expect("checked"), config }
        }
        NodeKind::PpgDriver => {
            let config: PpgSimConfig = params(entry.params)?;
            config.synth().map_err(|e| e.to_string())?;
            NodePlan::PpgDriver { human_id: human_id()?, sensor_id: sensor_id.expect("checked"), config }
        }
        NodeKind::EcgInterpreter | NodeKind::PpgInterpreter => {
            let config: InterpreterConfig = params(entry.params)?;
            config.validate().map_err(|e| e.to_string())?;
            let (human_id, sensor_id) = (human_id()?, sensor_id.expect("checked"));
            if kind == NodeKind::EcgInterpreter {
                NodePlan::EcgInterpreter { human_id, sensor_id, config }
            } else {
                NodePlan::PpgInterpreter { human_id, sensor_id, config }
            }
        }
        NodeKind::Fusion => {
            let mut map = entry.params;
            if map.contains_key("human_id") {
                return Err("human_id belongs on the node entry, not in params".into());
            }
            map.insert("human_id".into(), human_id()?.into());
            let config: FusionConfig = params(map)?;
            config.validate().map_err(|e| e.to_string())?;
            NodePlan::Fusion { config }
        }
        NodeKind::ExpressionScript => {
            let config: ExpressionScriptConfig = params(entry.params)?;
            config.validate()?;
            NodePlan::ExpressionScript { human_id: human_id()?, config }
        }
        NodeKind::Replay => {
            let mut p: ReplayParams = params(entry.params)?;
            if p.path.is_relative() {
                p.path = base_dir.join(&p.path);
            }
            if !(p.rate.is_finite() && p.rate > 0.0) {
                return Err(format!("rate {} must be > 0", p.rate));
            }
            list_log(&p.path).map_err(|e| format!("{}: {e}", p.path.display()))?;
            NodePlan::Replay { params: p }
        }
    };
    Ok(PlannedNode { kind, name: entry.name, plan })
}

fn start_node(bus: &dyn Bus, node: &PlannedNode) -> Result<RunningNode, String> {
    let name = node.name.as_deref();
    let s = |e: &dyn std::fmt::Display| e.to_string();
    match &node.plan {
        NodePlan::EcgDriver { human_id, sensor_id, config } => {
            run_ecg_driver(bus, human_id, sensor_id, config, name).map_err(|e| s(&e))
        }
        NodePlan::PpgDriver { human_id, sensor_id, config } => {
            run_ppg_driver(bus, human_id, sensor_id, config, name).map_err(|e| s(&e))
        }
        NodePlan::EcgInterpreter { human_id, sensor_id, config } => {
            run_ecg_interpreter(bus, human_id, sensor_id, config, name).map_err(|e| s(&e))
        }
        NodePlan::PpgInterpreter { human_id, sensor_id, config } => {
            run_ppg_interpreter(bus, human_id, sensor_id, config, name).map_err(|e| s(&e))
        }
        NodePlan::Fusion { config } => run_fusion_node(bus, config, name).map_err(|e| s(&e)),
        NodePlan::ExpressionScript { human_id, config } => {
            run_expression_script(bus, human_id, config, name).map_err(|e| s(&e))
        }
        NodePlan::Replay { params } => run_replay_driver(bus, &params.path, params.rate, name).map_err(|e| s(&e)),
    }
}
