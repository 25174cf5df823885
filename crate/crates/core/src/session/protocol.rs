//! Reader protocol: one JSON object per WebSocket text frame, discriminated by `type`.
//!
//! ```text
//! server → client  {"type":"page","knot":"start","page_index":0,"text":"…","choices":["a","b"],"displayable_state":{…},"finished":false}
//!                  {"type":"state","phys_arousal":0.71}
//! client → server  {"type":"advance"}  {"type":"choose","index":1}  {"type":"sim","arousal":0.9}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::director::PolicyMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Sent once on connection.
    Hello {
        policy: PolicyMode,
        /// Whether `sim` steering is accepted.
        simulator: bool,
        debounce_s: f64,
    },
    Page {
        knot: String,
        page_index: usize,
        text: String,
        choices: Vec<String>,
        displayable_state: BTreeMap<String, f64>,
        finished: bool,
    },
    /// Displayable variables only; empty updates are never sent.
    State {
        #[serde(flatten)]
        values: BTreeMap<String, f64>,
    },
    /// A client message that had no effect, and why.
    Rejected { action: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Advance,
    Choose { index: usize },
    Sim {
        #[serde(flatten)]
        values: BTreeMap<String, f64>,
    },
}

impl ClientMessage {
    pub fn name(&self) -> &'static str {
        match self {
            ClientMessage::Advance => "advance",
            ClientMessage::Choose { .. } => "choose",
            ClientMessage::Sim { .. } => "sim",
        }
    }

    pub fn parse(text: &str) -> Result<ClientMessage, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl ServerMessage {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn rejected(action: &str, reason: impl Into<String>) -> ServerMessage {
        ServerMessage::Rejected {
            action: action.to_string(),
            reason: reason.into(),
        }
    }
}
