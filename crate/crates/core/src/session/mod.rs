//! A reading session: story runtime + Director + physiological input, served to a
//! single reader over WebSocket.

pub mod config;
mod engine;
mod estimator;
pub mod protocol;
mod server;

use std::io::BufRead;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{DirectorSection, InputSource, ReplaySpeed, SessionConfig, SimulatorInput, DEFAULT_UI_ADDR};
pub use engine::{Engine, ReaderAction, ReaderLogEntry, Rejection};
pub use estimator::{high_pole, ConstructModel, Estimator};
pub use protocol::{ClientMessage, ServerMessage};
pub use server::{serve, serve_with, RunningSession, ServeOptions, SessionSummary};

use crate::classify::{ClassifyError, PipelineModel};
use crate::director::{DirectorConfig, PolicyRefused, MARKER_STREAM};
use crate::features::DEFAULT_FEATURES;
use crate::simulator::SimError;
use crate::story::{parse, ParseErrors, StoryGraph, StorySource};
use crate::transport::{Recording, StreamKind, TransportError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyRefused),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Story(ParseErrors),
    #[error("model {path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ClassifyError,
    },
    #[error("model {path}: {reason}")]
    ModelMismatch { path: PathBuf, reason: String },
    #[error("cannot serve the reader UI on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("reader log line {line}: {reason}")]
    ReaderLog { line: usize, reason: String },
}

impl SessionError {
    /// Errors in what the user supplied, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SessionError::Config(_)
                | SessionError::Policy(_)
                | SessionError::Story(_)
                | SessionError::Model { .. }
                | SessionError::ModelMismatch { .. }
                | SessionError::Sim(_)
                | SessionError::ReaderLog { .. }
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read and parse a story file. Returns the graph and its marker id.
pub fn load_story(path: &Path) -> Result<(StoryGraph, String), SessionError> {
    let source = StorySource::from_file(path).map_err(io_err(path))?;
    let id = source.origin.story_id();
    let graph = parse(&source).map_err(SessionError::Story)?;
    Ok((graph, id))
}

/// Load a model and check it serves construct `key` with features the extractor knows.
pub fn load_model(key: &str, path: &Path) -> Result<PipelineModel, SessionError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let model = PipelineModel::from_json(&text).map_err(|source| SessionError::Model {
        path: path.to_path_buf(),
        source,
    })?;
    let mismatch = |reason: String| SessionError::ModelMismatch {
        path: path.to_path_buf(),
        reason,
    };
    if model.construct.name != key {
        return Err(mismatch(format!(
            "configured for `{key}` but trained for `{}`",
            model.construct.name
        )));
    }
    if let Some(unknown) = model.registry.names.iter().find(|n| !DEFAULT_FEATURES.contains(&n.as_str())) {
        return Err(mismatch(format!("feature `{unknown}` is not produced by the extractor")));
    }
    Ok(model)
}

pub fn read_reader_log(r: impl BufRead) -> Result<Vec<ReaderLogEntry>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SessionError::ReaderLog {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SessionError::ReaderLog {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Re-run a recorded session: the signal samples of `recording` in file order, with
/// each reader action applied once the engine has consumed as many samples as it
/// had live. The story starts at the first session marker's timestamp.
pub fn reproduce(
    graph: StoryGraph,
    director: DirectorConfig,
    estimator: Option<Estimator>,
    debounce_s: f64,
    recording: &Recording,
    log: &[ReaderLogEntry],
) -> Engine {
    let mut index = vec![None; recording.streams.len()];
    let mut infos = Vec::new();
    for (i, s) in recording.streams.iter().enumerate() {
        if s.kind == StreamKind::Signal {
            index[i] = Some(infos.len());
            infos.push(s.clone());
        }
    }
    let t0 = recording
        .streams
        .iter()
        .position(|s| s.name == MARKER_STREAM)
        .and_then(|k| recording.samples_of(k).next())
        .map_or(0.0, |s| s.t);
    let mut engine = Engine::new(graph, director, estimator, infos, debounce_s, t0);
    let mut pending = log.iter().peekable();
    let mut apply_due = |engine: &mut Engine| {
        while let Some(e) = pending.next_if(|e| e.seq <= engine.seq()) {
            let _ = engine.on_reader(e.t, e.action);
        }
    };
    for (i, s) in &recording.samples {
        apply_due(&mut engine);
        if let Some(k) = index[*i] {
            engine.on_sample(k, s);
        }
    }
    apply_due(&mut engine);
    for e in pending {
        let _ = engine.on_reader(e.t, e.action);
    }
    engine
}
