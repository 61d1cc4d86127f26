//! Interactive demonstration server for a simulated tendon-driven robot.
//!
//! Clients stream tip targets over a WebSocket; the server refines the robot
//! configuration with a few IK steps per target, streams the resulting shape
//! back, records achieved tips and appends saved demonstrations to a store.

pub mod client;
pub mod protocol;
pub mod server;
pub mod session;

pub use client::Client;
pub use protocol::{ClientMsg, ErrorCode, RecordAction, ServerMsg, PROTOCOL_VERSION};
pub use server::Server;
pub use session::{Connection, DemoSink, Reply, ServerConfig, Session, SharedSink, TeleopSettings};
