//! Named, timestamped sample and marker streams.
//!
//! Streams live on a [`Registry`]. Producers push through an [`Outlet`], and each
//! [`Inlet`] gets its own bounded FIFO; overflow is counted, never silent. The same
//! streams can be served over TCP ([`net`]) and persisted as `.pifrec` JSON Lines
//! ([`recording`]).

mod local;
pub mod net;
pub mod recording;

use std::sync::OnceLock;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use local::{Inlet, Outlet, Registry, DEFAULT_CAPACITY};
pub use net::{ClockOffset, TcpServer, DEFAULT_PORT};
pub use recording::{Recording, RecordingSummary, RecordingWriter, Replay, Speed, StreamSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Signal,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub name: String,
    pub kind: StreamKind,
    pub channel_count: usize,
    /// Hz; 0 for irregular streams (always 0 for markers).
    pub nominal_rate: f64,
    pub channel_labels: Vec<String>,
    pub source_id: String,
}

impl StreamInfo {
    pub fn signal(name: &str, source_id: &str, labels: &[&str], rate: f64) -> Self {
        StreamInfo {
            name: name.to_string(),
            kind: StreamKind::Signal,
            channel_count: labels.len(),
            nominal_rate: rate,
            channel_labels: labels.iter().map(|s| s.to_string()).collect(),
            source_id: source_id.to_string(),
        }
    }

    pub fn marker(name: &str, source_id: &str) -> Self {
        StreamInfo {
            name: name.to_string(),
            kind: StreamKind::Marker,
            channel_count: 1,
            nominal_rate: 0.0,
            channel_labels: vec!["label".to_string()],
            source_id: source_id.to_string(),
        }
    }

    /// Enforce the invariants: markers are one irregular channel; labels match the count.
    pub fn normalized(mut self) -> Result<Self, TransportError> {
        if self.kind == StreamKind::Marker {
            self.channel_count = 1;
            self.nominal_rate = 0.0;
            self.channel_labels.truncate(1);
            if self.channel_labels.is_empty() {
                self.channel_labels.push("label".to_string());
            }
        }
        if self.channel_count == 0 {
            return Err(TransportError::InvalidInfo("channel_count must be positive".into()));
        }
        if self.channel_labels.len() != self.channel_count {
            return Err(TransportError::InvalidInfo(format!(
                "{} channel labels for {} channels",
                self.channel_labels.len(),
                self.channel_count
            )));
        }
        if !(self.nominal_rate >= 0.0 && self.nominal_rate.is_finite()) {
            return Err(TransportError::InvalidInfo("nominal_rate must be finite and ≥ 0".into()));
        }
        Ok(self)
    }

    /// Check that a sample fits this stream.
    pub fn check(&self, sample: &Sample) -> Result<(), TransportError> {
        if !sample.t.is_finite() {
            return Err(TransportError::InvalidTimestamp(sample.t));
        }
        match (&sample.v, self.kind) {
            (Payload::Values(v), StreamKind::Signal) if v.len() == self.channel_count => Ok(()),
            (Payload::Marker(_), StreamKind::Marker) => Ok(()),
            (p, _) => Err(TransportError::Arity {
                stream: self.source_id.clone(),
                expected: self.channel_count,
                got: match p {
                    Payload::Values(v) => v.len(),
                    Payload::Marker(_) => 0,
                },
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Values(Vec<f64>),
    Marker(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: Payload,
}

impl Sample {
    pub fn values(t: f64, v: Vec<f64>) -> Self {
        Sample { t, v: Payload::Values(v) }
    }

    pub fn marker(t: f64, label: impl Into<String>) -> Self {
        Sample {
            t,
            v: Payload::Marker(label.into()),
        }
    }

    pub fn as_values(&self) -> Option<&[f64]> {
        match &self.v {
            Payload::Values(v) => Some(v),
            Payload::Marker(_) => None,
        }
    }

    pub fn as_marker(&self) -> Option<&str> {
        match &self.v {
            Payload::Marker(m) => Some(m),
            Payload::Values(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("source id `{0}` is already registered")]
    DuplicateSource(String),
    #[error("no stream with source id `{0}`")]
    UnknownStream(String),
    #[error("invalid stream info: {0}")]
    InvalidInfo(String),
    #[error("stream `{stream}` expects {expected} channel(s), got {got}")]
    Arity { stream: String, expected: usize, got: usize },
    #[error("timestamp {t} precedes previous {prev} on `{stream}`")]
    TimestampRegression { stream: String, prev: f64, t: f64 },
    #[error("invalid timestamp {0}")]
    InvalidTimestamp(f64),
    #[error("peer disconnected")]
    Disconnected,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("corrupt recording at byte {offset} (line {line}): {reason}")]
    Corrupt {
        offset: u64,
        line: usize,
        reason: String,
        /// Everything read before the damage.
        recovered: Box<Recording>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn epoch() -> Instant {
    static START: OnceLock<Instant> = OnceLock::new();
    *START.get_or_init(Instant::now)
}

/// Monotonic seconds since the first call in this process.
pub fn local_clock() -> f64 {
    epoch().elapsed().as_secs_f64()
}

/// Wall-clock seconds since the Unix epoch; stored once per recording.
pub fn wall_clock() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_info_is_forced_to_one_channel() {
        let mut info = StreamInfo::marker("m", "m1");
        info.channel_count = 4;
        info.nominal_rate = 10.0;
        let n = info.normalized().unwrap();
        assert_eq!((n.channel_count, n.nominal_rate), (1, 0.0));
        assert!(StreamInfo::signal("x", "x1", &[], 10.0).normalized().is_err());
    }

    #[test]
    fn payload_json_shapes() {
        assert_eq!(serde_json::to_string(&Sample::values(1.5, vec![0.25])).unwrap(), r#"{"t":1.5,"v":[0.25]}"#);
        let m: Sample = serde_json::from_str(r#"{"t":2.0,"v":"PAGE:1"}"#).unwrap();
        assert_eq!(m.as_marker(), Some("PAGE:1"));
    }
}
