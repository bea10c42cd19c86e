//! Broker-mediated publish/subscribe over TCP.
//!
//! Nodes connect to a single broker, register the topics they will publish
//! and subscribe to, and exchange envelopes through it. Depending on the
//! [`BusMode`] the connection runs the secure channel handshake, envelopes
//! carry signatures, both, or neither.

mod broker;
mod capture;
mod events;
mod message;
mod session;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use broker::{broker_serve, BrokerConfig, BrokerHandle, DEFAULT_QUEUE_CAPACITY};
pub use capture::{
    capture_load, capture_scan, parse_capture, CaptureError, CaptureRecord, CaptureWriter, ConnectionTap, Direction,
    Match, CAPTURE_MAGIC,
};
pub use events::{load_event_log, EventKind, EventLog, SecurityEvent};
pub use message::BusMessage;
pub use session::{node_connect, Inbound, NodeConfig, Publisher, Session};

use crate::authz::Action;
use crate::channel::{ChannelError, Frame, FrameType, SecurityAssociation};

/// Topic on which the broker fans out security events.
pub const EVENTS_TOPIC: &str = "/security-events";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusMode {
    None,
    AppSig,
    #[default]
    Channel,
    Both,
}

impl BusMode {
    pub const ALL: [BusMode; 4] = [BusMode::None, BusMode::AppSig, BusMode::Channel, BusMode::Both];

    pub fn app_sig(self) -> bool {
        matches!(self, BusMode::AppSig | BusMode::Both)
    }

    pub fn secure_channel(self) -> bool {
        matches!(self, BusMode::Channel | BusMode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BusMode::None => "none",
            BusMode::AppSig => "app-sig",
            BusMode::Channel => "channel",
            BusMode::Both => "both",
        }
    }
}

impl fmt::Display for BusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BusMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}, expected none|app-sig|channel|both"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("cannot bind {addr}: {message}")]
    BindFailure { addr: String, message: String },
    #[error("connection to broker lost")]
    ConnectionLost,
    #[error("registration refused for {0:?}")]
    NotAuthorized(Vec<(String, Action)>),
    #[error("topic {0} was not declared for publishing")]
    NotDeclared(String),
    #[error("invalid node configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Wraps bus messages into frames, sealing them when a session exists.
#[derive(Clone)]
pub(crate) struct Sealer {
    sa: Option<Arc<Mutex<SecurityAssociation>>>,
}

impl Sealer {
    pub(crate) fn plaintext() -> Self {
        Self { sa: None }
    }

    pub(crate) fn secure(sa: SecurityAssociation) -> Self {
        Self { sa: Some(Arc::new(Mutex::new(sa))) }
    }

    pub(crate) fn is_secure(&self) -> bool {
        self.sa.is_some()
    }

    pub(crate) fn wrap(&self, plaintext: &[u8]) -> Result<Vec<u8>, ChannelError> {
        match &self.sa {
            Some(sa) => sa.lock().seal_frame(plaintext),
            None => Frame::new(FrameType::Data, plaintext.to_vec()).encode(),
        }
    }

    pub(crate) fn unwrap(&self, frame: Frame) -> Result<Vec<u8>, ChannelError> {
        match &self.sa {
            Some(sa) => sa.lock().open_body(frame.frame_type, &frame.body),
            None if frame.frame_type == FrameType::Data => Ok(frame.body),
            None => Err(ChannelError::ProtocolViolation(format!("{:?} frame on plaintext connection", frame.frame_type))),
        }
    }
}
