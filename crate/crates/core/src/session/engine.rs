//! The deterministic heart of a session: story state, Director and estimator,
//! mutated only through [`Engine::on_sample`] and [`Engine::on_reader`].
//!
//! Given the same inputs in the same order an engine reaches the same state, which
//! is what makes a recorded session reproducible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::estimator::Estimator;
use super::protocol::ServerMessage;
use crate::director::{Director, DirectorConfig, Marker, StateUpdate, VarMutation};
use crate::sensors::STATE_STREAM;
use crate::story::{advance_with, render_page, start, AdvanceError, EngineEvent, ReaderEvent, StoryGraph, StoryState};
use crate::transport::{Sample, StreamInfo, StreamKind};

/// A page-turning reader action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ReaderAction {
    Advance,
    Choose { index: usize },
}

impl ReaderAction {
    pub fn name(&self) -> &'static str {
        match self {
            ReaderAction::Advance => "advance",
            ReaderAction::Choose { .. } => "choose",
        }
    }
}

/// One line of a reader log: the action, when it happened, and how many input
/// samples the engine had consumed before it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReaderLogEntry {
    pub seq: u64,
    pub t: f64,
    #[serde(flatten)]
    pub action: ReaderAction,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    #[error("{elapsed:.2} s since the last page turn; wait {debounce_s} s")]
    Debounce { elapsed: f64, debounce_s: f64 },
    #[error(transparent)]
    Story(#[from] AdvanceError),
}

pub struct Engine {
    graph: StoryGraph,
    state: StoryState,
    director: Director,
    estimator: Option<Estimator>,
    streams: Vec<StreamInfo>,
    debounce_s: f64,
    last_turn: Option<f64>,
    seq: u64,
    markers: Vec<(f64, Marker)>,
    emitted: usize,
    branches: Vec<String>,
    events: Vec<EngineEvent>,
    dirty: bool,
}

impl Engine {
    /// Start the story at time `t0`. `streams` are the input streams, indexed as in
    /// [`Engine::on_sample`].
    pub fn new(
        graph: StoryGraph,
        director: DirectorConfig,
        estimator: Option<Estimator>,
        streams: Vec<StreamInfo>,
        debounce_s: f64,
        t0: f64,
    ) -> Engine {
        let (state, events) = start(&graph);
        let mut engine = Engine {
            graph,
            state,
            director: Director::new(director),
            estimator,
            streams,
            debounce_s,
            last_turn: None,
            seq: 0,
            markers: Vec::new(),
            emitted: 0,
            branches: Vec::new(),
            events: Vec::new(),
            dirty: false,
        };
        engine.apply_events(t0, events);
        engine
    }

    pub fn streams(&self) -> &[StreamInfo] {
        &self.streams
    }

    /// Consume one input sample. Returns true if any `phys_*` variable changed.
    pub fn on_sample(&mut self, stream: usize, sample: &Sample) -> bool {
        self.seq += 1;
        let Some(info) = self.streams.get(stream) else {
            return false;
        };
        if info.kind == StreamKind::Marker {
            return false;
        }
        let updates = if info.name == STATE_STREAM {
            match sample.as_values() {
                Some(v) => vec![StateUpdate::new(
                    sample.t,
                    info.source_id.clone(),
                    info.channel_labels.iter().cloned().zip(v.iter().copied()),
                )],
                None => Vec::new(),
            }
        } else if let Some(est) = &mut self.estimator {
            est.push(info, sample)
        } else {
            Vec::new()
        };
        let mut changed = false;
        for u in &updates {
            let m = self.director.on_state(u);
            changed |= !m.is_empty();
            self.sync(&m);
        }
        changed
    }

    /// Apply a reader action at time `t` (same clock as the samples).
    pub fn on_reader(&mut self, t: f64, action: ReaderAction) -> Result<ServerMessage, Rejection> {
        if let Some(last) = self.last_turn {
            let elapsed = t - last;
            if elapsed < self.debounce_s {
                return Err(Rejection::Debounce {
                    elapsed,
                    debounce_s: self.debounce_s,
                });
            }
        }
        let event = match action {
            ReaderAction::Advance => ReaderEvent::NextPage,
            ReaderAction::Choose { index } => ReaderEvent::Choose(index),
        };
        // Director reactions land while the runtime is still moving, so an automatic
        // choice right after a closing tag sees that tag's values. A failed advance
        // leaves nothing behind.
        let snapshot = (self.director.clone(), self.markers.len(), self.branches.len());
        let Engine {
            graph,
            state,
            director,
            markers,
            branches,
            ..
        } = self;
        let mut changed = false;
        let mut hook = |e: &EngineEvent| -> Vec<(String, f64)> {
            if let EngineEvent::BranchTaken { target } = e {
                branches.push(target.clone());
            }
            let Some(m) = Marker::from_event(e) else {
                return Vec::new();
            };
            let muts = director.on_marker(t, &m);
            markers.push((t, m));
            changed |= !muts.is_empty();
            muts.into_iter().map(|m| (m.name, m.value)).collect()
        };
        match advance_with(graph, state, event, &mut hook) {
            Ok((next, events)) => {
                self.state = next;
                self.dirty |= changed;
                self.last_turn = Some(t);
                self.events.extend(events);
                Ok(self.page())
            }
            Err(e) => {
                self.director = snapshot.0;
                self.markers.truncate(snapshot.1);
                self.branches.truncate(snapshot.2);
                Err(e.into())
            }
        }
    }

    fn apply_events(&mut self, t: f64, events: Vec<EngineEvent>) {
        for e in &events {
            if let EngineEvent::BranchTaken { target } = e {
                self.branches.push(target.clone());
            }
            if let Some(m) = Marker::from_event(e) {
                let muts = self.director.on_marker(t, &m);
                self.sync(&muts);
                self.markers.push((t, m));
            }
        }
        self.events.extend(events);
    }

    fn sync(&mut self, mutations: &[VarMutation]) {
        for m in mutations {
            self.state.set_phys(&m.name, m.value);
        }
        self.dirty |= !mutations.is_empty();
    }

    pub fn page(&self) -> ServerMessage {
        let p = render_page(&self.graph, &self.state);
        ServerMessage::Page {
            knot: p.knot,
            page_index: p.page_index,
            text: p.text,
            choices: p.choices,
            displayable_state: self.director.displayable(),
            finished: p.finished,
        }
    }

    /// Displayable values, if any changed since the last call.
    pub fn take_state(&mut self) -> Option<ServerMessage> {
        if !std::mem::take(&mut self.dirty) {
            return None;
        }
        let values = self.director.displayable();
        (!values.is_empty()).then_some(ServerMessage::State { values })
    }

    /// Markers produced since the last call, for the marker outlet.
    pub fn take_markers(&mut self) -> Vec<(f64, Marker)> {
        let new = self.markers[self.emitted..].to_vec();
        self.emitted = self.markers.len();
        new
    }

    pub fn markers(&self) -> &[(f64, Marker)] {
        &self.markers
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.events
    }

    /// Branch targets taken so far, in order.
    pub fn branches(&self) -> &[String] {
        &self.branches
    }

    pub fn variables(&self) -> &BTreeMap<String, f64> {
        self.director.variables()
    }

    pub fn story_state(&self) -> &StoryState {
        &self.state
    }

    pub fn director(&self) -> &Director {
        &self.director
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn finished(&self) -> bool {
        self.state.finished
    }
}
