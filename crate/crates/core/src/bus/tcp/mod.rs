//! TCP transport: remote nodes get the local broker's semantics over a
//! framed byte stream. One connection carries one node; closing it removes
//! the node and its subscriptions.

mod client;
pub mod frame;
mod server;

pub use client::connect_tcp;
pub use server::{serve_tcp, TcpServer};
