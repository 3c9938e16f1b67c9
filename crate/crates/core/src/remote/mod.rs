//! Remote observation and control over WebSocket.

mod client;
pub mod protocol;
mod proxy;
mod server;

pub use client::Client;
pub use protocol::{Ack, ClientFrame, CommandMessage, EventKind, EventMessage, Handshake, Role, ServerFrame, Verb};
pub use proxy::DelayProxy;
pub use server::{machine_digest, Server, ServerConfig, DEFAULT_BACKLOG, SESSION_PATH};

/// Env var that overrides `--bind`.
pub const BIND_VAR: &str = "ORC_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:7878";

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("cannot bind {0}")]
    Bind(String),
    #[error("connection: {0}")]
    Connection(String),
    #[error(transparent)]
    Malformed(#[from] protocol::MalformedFrame),
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("{code}: {message}")]
    Rejected { code: String, message: String },
}

impl RemoteError {
    pub fn code(&self) -> &str {
        match self {
            RemoteError::Bind(_) => "BIND_ERROR",
            RemoteError::Connection(_) => "CONNECTION_ERROR",
            RemoteError::Malformed(_) => "MALFORMED_FRAME",
            RemoteError::Timeout => "TIMEOUT",
            RemoteError::Rejected { code, .. } => code,
        }
    }
}
