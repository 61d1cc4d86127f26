//! Wire messages. One JSON object per WebSocket text frame, tagged by `type`.

use serde::{Deserialize, Serialize};
use tdcr_core::kinematics::Config;

/// Sent in every `env` message.
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
    Save,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    /// Task and robot are preset names; omitted fields fall back to the
    /// server defaults.
    Init {
        #[serde(default)]
        task: Option<String>,
        #[serde(default)]
        robot: Option<String>,
    },
    /// Task values with or without the trailing bias element.
    Context { values: Vec<f64> },
    Target { p: [f64; 3] },
    Record { action: RecordAction },
    Playback {
        model: String,
        context: Vec<f64>,
        /// Milliseconds between streamed states; 0 sends them all at once.
        #[serde(default)]
        cadence_ms: Option<u64>,
    },
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        /// Extent of the start region along x and z.
        half_extents: [f64; 2],
    },
    Spheres { centers: [[f64; 3]; 2], radii: [f64; 2] },
    Mesh { vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub task: String,
    pub schema: String,
    pub context: Vec<f64>,
    pub surface: Surface,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Env { version: u32, descriptor: EnvDescriptor },
    State { backbone: Vec<[f64; 3]>, tip: [f64; 3], config: Config, residual: f64, recording: bool },
    /// Completion of a request that produces no other reply.
    Ack { of: String },
    Saved { index: usize },
    Error { code: ErrorCode, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    NotInitialized,
    InvalidTarget,
    InvalidContext,
    IncompleteContext,
    EmptyRecording,
    BadState,
    SchemaMismatch,
    File,
    Internal,
}

impl ServerMsg {
    pub fn error(code: ErrorCode, msg: impl Into<String>) -> Self {
        ServerMsg::Error { code, msg: msg.into() }
    }

    pub fn ack(of: &str) -> Self {
        ServerMsg::Ack { of: of.into() }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

pub fn parse_client(text: &str) -> Result<ClientMsg, serde_json::Error> {
    serde_json::from_str(text)
}
