//! Subcommand implementations.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, OnceLock};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use physiobus::bus::tcp::serve_tcp;
use physiobus::bus::{Broker, NodeHandle, ParameterValue};
use physiobus::clock::{Clock, ScaledClock};
use physiobus::drivers::run_replay_driver;
use physiobus::msgmodel::json::delivery_to_json;
use physiobus::msgmodel::modality_indicators;
use physiobus::recorder::record;
use physiobus::{Bus, RemoteBus, RunningNode};
use physiobus_bridge::serve_ws;
use serde_json::Value;
use thiserror::Error;

use crate::launch::LaunchConfig;

pub const DEFAULT_BUS: &str = "127.0.0.1:7447";

#[derive(Debug, Parser)]
#[command(name = "physiobus", version, about = "Physiological-signal middleware: broker, nodes and tools")]
pub struct Cli {
    /// Broker address to join. Defaults to 127.0.0.1:7447; `launch` hosts
    /// its own broker unless this is given.
    #[arg(long, global = true, value_name = "ADDR")]
    pub bus: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a broker until interrupted.
    Bus {
        /// TCP address to accept nodes on.
        #[arg(long, value_name = "ADDR")]
        listen: String,
    },
    /// Start the nodes of a JSON launch config.
    Launch(LaunchArgs),
    /// List the topics known to the broker.
    List,
    /// Print messages on a topic or pattern as JSON lines.
    Echo {
        pattern: String,
        /// Exit after this many messages.
        #[arg(long)]
        count: Option<u64>,
    },
    /// Query node parameters.
    Param {
        #[command(subcommand)]
        action: ParamAction,
    },
    /// Print the indicator categories a sensor modality informs.
    Describe { sensor_type: String },
    /// Record matching topics to a log file until interrupted.
    Record {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(required = true)]
        patterns: Vec<String>,
        /// Stop after this many seconds.
        #[arg(long, value_name = "S")]
        duration: Option<f64>,
    },
    /// Publish a recorded log back onto the bus.
    Replay {
        path: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
    },
    /// Serve the WebSocket bridge for browser clients.
    Bridge {
        #[arg(long, value_name = "ADDR")]
        ws: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ParamAction {
    /// Print one parameter of a node as JSON.
    Get { node: String, name: String },
}

#[derive(Debug, Args)]
pub struct LaunchArgs {
    pub config: PathBuf,
    /// Also accept TCP nodes on this address (local broker only).
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    /// Also serve the WebSocket bridge on this address.
    #[arg(long, value_name = "ADDR")]
    pub ws: Option<String>,
    /// Stop after this much bus time, in seconds.
    #[arg(long, value_name = "S")]
    pub duration: Option<f64>,
    /// Bus clock speed-up factor (local broker only).
    #[arg(long, default_value_t = 1.0, value_name = "X")]
    pub speed: f64,
    /// Print messages matching this pattern as JSON lines on stdout.
    #[arg(long, value_name = "PATTERN")]
    pub echo: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Raised by Ctrl-C. The handler is installed on first use.
pub fn interrupted() -> &'static AtomicBool {
    static FLAG: OnceLock<&'static AtomicBool> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag: &'static AtomicBool = Box::leak(Box::new(AtomicBool::new(false)));
        if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Release)) {
            warn!("cannot install interrupt handler: {e}");
        }
        flag
    })
}

fn tool_node(bus: &dyn Bus, what: &str) -> Result<NodeHandle, CliError> {
    bus.create_node(&format!("cli_{what}_{}", std::process::id()), Vec::new()).map_err(runtime)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let remote = RemoteBus(cli.bus.clone().unwrap_or_else(|| DEFAULT_BUS.to_owned()));
    match cli.command {
        Command::Bus { listen } => run_bus(&listen),
        Command::Launch(args) => run_launch(cli.bus.as_deref(), args),
        Command::List => run_list(&remote),
        Command::Echo { pattern, count } => run_echo(&remote, &pattern, count),
        Command::Param { action: ParamAction::Get { node, name } } => run_param_get(&remote, &node, &name),
        Command::Describe { sensor_type } => run_describe(&sensor_type),
        Command::Record { out, patterns, duration } => run_record(&remote, out, &patterns, duration),
        Command::Replay { path, rate } => run_replay(&remote, path, rate),
        Command::Bridge { ws } => run_bridge(&remote, &ws),
    }
}

fn wait_for_interrupt() {
    let flag = interrupted();
    while !flag.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn run_bus(listen: &str) -> Result<(), CliError> {
    let broker = Broker::new();
    let server = serve_tcp(&broker, listen).map_err(runtime)?;
    eprintln!("broker listening on {}", server.local_addr());
    wait_for_interrupt();
    server.shutdown();
    Ok(())
}

fn run_launch(bus_addr: Option<&str>, args: LaunchArgs) -> Result<(), CliError> {
    if !(args.speed.is_finite() && args.speed > 0.0) {
        return Err(CliError::Usage(format!("--speed {} must be > 0", args.speed)));
    }
    if args.duration.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
        return Err(CliError::Usage("--duration must be >= 0".into()));
    }
    if bus_addr.is_some() && (args.listen.is_some() || args.speed != 1.0) {
        return Err(CliError::Usage("--listen and --speed need a local broker and cannot be combined with --bus".into()));
    }
    let config = LaunchConfig::load(&args.config).map_err(|e| CliError::Usage(e.to_string()))?;
    let stop = interrupted();

    let broker;
    let remote;
    let mut tcp = None;
    let (bus, clock): (&dyn Bus, Arc<dyn Clock>) = if let Some(addr) = bus_addr {
        remote = RemoteBus(addr.to_owned());
        (&remote, Arc::new(physiobus::clock::SystemClock))
    } else {
        broker = if args.speed == 1.0 { Broker::new() } else { Broker::with_clock(Arc::new(ScaledClock::new(args.speed))) };
        if let Some(addr) = &args.listen {
            let server = serve_tcp(&broker, addr.as_str()).map_err(runtime)?;
            eprintln!("broker listening on {}", server.local_addr());
            tcp = Some(server);
        }
        (&broker, broker.clock())
    };

    let echo = match args.echo.as_slice() {
        [] => None,
        patterns => Some(start_echo(bus, patterns)?),
    };
    let bridge = match &args.ws {
        Some(addr) => {
            let b = serve_ws(bus, addr.as_str()).map_err(runtime)?;
            eprintln!("bridge listening on ws://{}", b.local_addr());
            Some(b)
        }
        None => None,
    };
    let nodes = config.start(bus).map_err(runtime)?;
    eprintln!("launched {} nodes", nodes.len());

    let deadline = args.duration.map(|d| clock.now_ns() + (d * 1e9) as i64);
    loop {
        if stop.load(Ordering::Acquire) || deadline.is_some_and(|d| clock.now_ns() >= d) {
            break;
        }
        if !nodes.is_empty() && nodes.iter().all(RunningNode::is_finished) {
            info!("all nodes finished");
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    // Producers first, then the consumers that observe them.
    drop(nodes);
    drop(bridge);
    drop(echo);
    if let Some(server) = tcp {
        server.shutdown();
    }
    Ok(())
}

/// Subscription printing deliveries as JSON lines; kept alive by the caller.
fn start_echo<S: AsRef<str>>(bus: &dyn Bus, patterns: &[S]) -> Result<(NodeHandle, physiobus::bus::Subscription), CliError> {
    let node = tool_node(bus, "echo")?;
    let sub = node
        .subscribe_many(patterns, |d| match d.decode() {
            Ok(msg) => println!("{}", Value::Object(delivery_to_json(&d.topic, d.recv_time_ns, &msg))),
            Err(e) => warn!("undecodable message on {}: {e}", d.topic),
        })
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((node, sub))
}

fn run_list(bus: &dyn Bus) -> Result<(), CliError> {
    let node = tool_node(bus, "list")?;
    let topics = node.list_topics().map_err(runtime)?;
    for t in topics {
        println!("{}\t{}\t{}\t{}", t.topic, t.schema_id.name(), t.publisher, t.dropped);
    }
    Ok(())
}

fn run_echo(bus: &dyn Bus, pattern: &str, count: Option<u64>) -> Result<(), CliError> {
    let node = tool_node(bus, "echo")?;
    let (tx, rx) = mpsc::channel();
    let _sub = node
        .subscribe(pattern, move |d| {
            let _ = tx.send(d.clone());
        })
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let stop = interrupted();
    let mut printed = 0;
    while !stop.load(Ordering::Acquire) && count.is_none_or(|c| printed < c) {
        match rx.recv_timeout(Duration::from_millis(50)) {
            Ok(d) => match d.decode() {
                Ok(msg) => {
                    println!("{}", Value::Object(delivery_to_json(&d.topic, d.recv_time_ns, &msg)));
                    printed += 1;
                }
                Err(e) => warn!("undecodable message on {}: {e}", d.topic),
            },
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => return Err(runtime("subscription closed")),
        }
    }
    Ok(())
}

fn run_param_get(bus: &dyn Bus, target: &str, name: &str) -> Result<(), CliError> {
    let node = tool_node(bus, "param")?;
    match node.get_parameter(target, name).map_err(runtime)? {
        Some(v) => {
            println!("{}", param_json(&v));
            Ok(())
        }
        None => Err(runtime(format!("node {target:?} has no parameter {name:?}"))),
    }
}

fn param_json(v: &ParameterValue) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn run_describe(sensor_type: &str) -> Result<(), CliError> {
    let indicators = modality_indicators(sensor_type).map_err(|e| CliError::Usage(e.to_string()))?;
    for i in indicators {
        println!("{i}");
    }
    Ok(())
}

fn run_record(bus: &dyn Bus, out: PathBuf, patterns: &[String], duration: Option<f64>) -> Result<(), CliError> {
    if duration.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
        return Err(CliError::Usage("--duration must be >= 0".into()));
    }
    let node = tool_node(bus, "record")?;
    let session = record(&node, patterns, &out).map_err(runtime)?;
    eprintln!("recording to {}", out.display());
    let stop = interrupted();
    let deadline = duration.map(|d| node.now_ns() + (d * 1e9) as i64);
    while !stop.load(Ordering::Acquire) && deadline.is_none_or(|d| node.now_ns() < d) {
        std::thread::sleep(Duration::from_millis(20));
    }
    let summary = session.stop(node.now_ns()).map_err(runtime)?;
    eprintln!("wrote {} records to {}", summary.records, summary.path.display());
    Ok(())
}

fn run_replay(bus: &dyn Bus, path: PathBuf, rate: f64) -> Result<(), CliError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(CliError::Usage(format!("--rate {rate} must be > 0")));
    }
    let name = format!("cli_replay_{}", std::process::id());
    let node = run_replay_driver(bus, path, rate, Some(&name)).map_err(runtime)?;
    let stop = interrupted();
    while !node.is_finished() && !stop.load(Ordering::Acquire) {
        std::thread::sleep(Duration::from_millis(20));
    }
    drop(node);
    Ok(())
}

fn run_bridge(bus: &dyn Bus, ws: &str) -> Result<(), CliError> {
    let server = serve_ws(bus, ws).map_err(runtime)?;
    eprintln!("bridge listening on ws://{}", server.local_addr());
    wait_for_interrupt();
    server.shutdown();
    Ok(())
}
