//! Wire format of the steering API.
//!
//! `POST /command` takes a [`SteerCommand`] body and answers with an [`Ack`] or an
//! [`ErrorBody`]. Every `/stream` message is a JSON object tagged by `type`:
//!
//! - `frame`: a telemetry frame (speeds in m/s, costs normalised to `[0, 1]`,
//!   `db_proxy` a display-only pseudo-decibel).
//! - `ack`: reply to a command sent over the socket.
//! - `error`: a rejected command or an unreadable message.
//! - `lagged`: the client fell behind and `missed` frames were dropped.

use quietgait_core::steer::{Ack, SteerCommand, TelemetryFrame};
use quietgait_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub reason: String,
}

impl ErrorBody {
    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::InvalidCommand { field, reason } => Self { field: Some(field.clone()), reason: reason.clone() },
            other => Self { field: None, reason: other.to_string() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(TelemetryFrame),
    Ack(Ack),
    Error(ErrorBody),
    Lagged { missed: u64 },
}

/// Parses a command body, reporting unknown fields and bad types as errors.
pub fn parse_command(text: &str) -> Result<SteerCommand, ErrorBody> {
    serde_json::from_str(text).map_err(|e| ErrorBody { field: None, reason: format!("malformed command: {e}") })
}
