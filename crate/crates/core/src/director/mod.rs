//! The bridge between processed physiology and the story: tag-scoped
//! accumulators and the `phys_*` variables derived from them.
//!
//! All inputs go through [`Director::process`] in timestamp order (see [`merge`]),
//! which makes a run a pure function of its input log.

mod marker;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::phys_var;

pub use marker::{Marker, MARKER_STREAM};

/// Named scalar estimates produced at one instant by one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub t: f64,
    pub source: String,
    pub values: BTreeMap<String, f64>,
}

impl StateUpdate {
    pub fn new(t: f64, source: impl Into<String>, values: impl IntoIterator<Item = (String, f64)>) -> Self {
        StateUpdate {
            t,
            source: source.into(),
            values: values.into_iter().collect(),
        }
    }
}

/// Running statistics of one key. The sum is compensated so long sessions do not drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyStats {
    pub sum: f64,
    #[serde(skip)]
    compensation: f64,
    pub count: u64,
    pub min: f64,
    pub max: f64,
}

impl Default for KeyStats {
    fn default() -> Self {
        KeyStats {
            sum: 0.0,
            compensation: 0.0,
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl KeyStats {
    pub fn push(&mut self, v: f64) {
        // Neumaier summation
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sum + self.compensation) / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAccumulator {
    pub tag: String,
    pub open: bool,
    pub keys: BTreeMap<String, KeyStats>,
    pub opened_at: Option<f64>,
    pub closed_at: Option<f64>,
    pub visits: u32,
}

impl ContextAccumulator {
    fn new(tag: &str) -> Self {
        ContextAccumulator {
            tag: tag.to_string(),
            open: false,
            keys: BTreeMap::new(),
            opened_at: None,
            closed_at: None,
            visits: 0,
        }
    }

    pub fn mean(&self, key: &str) -> Option<f64> {
        self.keys.get(key).and_then(KeyStats::mean)
    }

    pub fn count(&self) -> u64 {
        self.keys.values().map(|k| k.count).max().unwrap_or(0)
    }
}

/// How the global `phys_<key>` follows incoming updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalMode {
    Latest,
    WindowMean(usize),
}

/// Which Director variables the reader may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Reader steers explicitly and sees every value.
    Biofeedback,
    /// Reader knows they are measured (global values shown) but not how the story adapts.
    #[default]
    Neuroadaptive,
    /// Implicit input: nothing is displayed.
    Empowering,
    /// Manipulation without awareness; refused unless explicitly allowed.
    Covert,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("policy mode `covert` is refused; set allow_covert = true to override")]
pub struct PolicyRefused;

impl PolicyMode {
    pub fn check(self, allow_covert: bool) -> Result<PolicyMode, PolicyRefused> {
        if self == PolicyMode::Covert && !allow_covert {
            Err(PolicyRefused)
        } else {
            Ok(self)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectorConfig {
    pub global: GlobalMode,
    /// Tags whose accumulator restarts on every opening instead of continuing.
    pub reset_tags: BTreeSet<String>,
    pub policy: PolicyMode,
}

impl Default for DirectorConfig {
    fn default() -> Self {
        DirectorConfig {
            global: GlobalMode::Latest,
            reset_tags: BTreeSet::new(),
            policy: PolicyMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarMutation {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    CloseWithoutOpen { t: f64, tag: String },
    EmptyClose { t: f64, tag: String },
    AlreadyOpen { t: f64, tag: String },
    NonFinite { t: f64, key: String, source: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::CloseWithoutOpen { t, tag } => write!(f, "{t:.3}s: TAG_STOP:{tag} without matching open; ignored"),
            Diagnostic::EmptyClose { t, tag } => write!(f, "{t:.3}s: {tag} closed with no updates; variables not written"),
            Diagnostic::AlreadyOpen { t, tag } => write!(f, "{t:.3}s: TAG_START:{tag} while already open; ignored"),
            Diagnostic::NonFinite { t, key, source } => write!(f, "{t:.3}s: non-finite `{key}` from {source} rejected"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompareError {
    #[error("context `{0}` was never visited; add a path through it before comparing")]
    Unvisited(String),
    #[error("context `{0}` is still open")]
    Unclosed(String),
    #[error("context `{tag}` recorded no `{key}` values")]
    Empty { tag: String, key: String },
}

/// One entry of the Director's input log.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Marker { t: f64, marker: Marker },
    State(StateUpdate),
}

impl Input {
    pub fn t(&self) -> f64 {
        match self {
            Input::Marker { t, .. } => *t,
            Input::State(u) => u.t,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Input::Marker { .. } => 0,
            Input::State(_) => 1,
        }
    }
}

/// Merge markers and updates by timestamp; at equal times markers come first.
/// Ties within a kind keep their input order.
pub fn merge(markers: impl IntoIterator<Item = (f64, Marker)>, states: impl IntoIterator<Item = StateUpdate>) -> Vec<Input> {
    let mut all: Vec<Input> = markers
        .into_iter()
        .map(|(t, marker)| Input::Marker { t, marker })
        .chain(states.into_iter().map(Input::State))
        .collect();
    all.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.rank().cmp(&b.rank())));
    all
}

#[derive(Debug, Clone, Default)]
pub struct Director {
    pub config: DirectorConfig,
    accumulators: BTreeMap<String, ContextAccumulator>,
    /// Currently open tags, innermost last.
    open: Vec<String>,
    windows: BTreeMap<String, VecDeque<f64>>,
    globals: BTreeMap<String, f64>,
    variables: BTreeMap<String, f64>,
    diagnostics: Vec<Diagnostic>,
}

impl Director {
    pub fn new(config: DirectorConfig) -> Self {
        Director {
            config,
            ..Default::default()
        }
    }

    pub fn process(&mut self, input: &Input) -> Vec<VarMutation> {
        match input {
            Input::Marker { t, marker } => self.on_marker(*t, marker),
            Input::State(u) => self.on_state(u),
        }
    }

    pub fn on_marker(&mut self, t: f64, marker: &Marker) -> Vec<VarMutation> {
        match marker {
            Marker::TagStart(tag) => {
                self.open_tag(t, tag);
                Vec::new()
            }
            Marker::TagStop(tag) => self.close_tag(t, tag),
            _ => Vec::new(),
        }
    }

    fn open_tag(&mut self, t: f64, tag: &str) {
        if self.open.iter().any(|o| o == tag) {
            self.diag(Diagnostic::AlreadyOpen { t, tag: tag.to_string() });
            return;
        }
        let reset = self.config.reset_tags.contains(tag);
        let acc = self.accumulators.entry(tag.to_string()).or_insert_with(|| ContextAccumulator::new(tag));
        if reset {
            acc.keys.clear();
        }
        acc.open = true;
        acc.opened_at = Some(t);
        acc.closed_at = None;
        acc.visits += 1;
        self.open.push(tag.to_string());
    }

    fn close_tag(&mut self, t: f64, tag: &str) -> Vec<VarMutation> {
        let Some(pos) = self.open.iter().position(|o| o == tag) else {
            self.diag(Diagnostic::CloseWithoutOpen { t, tag: tag.to_string() });
            return Vec::new();
        };
        self.open.remove(pos);
        let acc = self.accumulators.get_mut(tag).expect("open tags have accumulators");
        acc.open = false;
        acc.closed_at = Some(t);
        let mutations: Vec<VarMutation> = acc
            .keys
            .iter()
            .filter_map(|(k, s)| {
                s.mean().map(|m| VarMutation {
                    name: phys_var(Some(tag), k),
                    value: m,
                })
            })
            .collect();
        if mutations.is_empty() {
            self.diag(Diagnostic::EmptyClose { t, tag: tag.to_string() });
        }
        self.apply(&mutations);
        mutations
    }

    pub fn on_state(&mut self, update: &StateUpdate) -> Vec<VarMutation> {
        let mut mutations = Vec::new();
        for (key, &v) in &update.values {
            if !v.is_finite() {
                self.diag(Diagnostic::NonFinite {
                    t: update.t,
                    key: key.clone(),
                    source: update.source.clone(),
                });
                continue;
            }
            for tag in &self.open {
                self.accumulators
                    .get_mut(tag)
                    .expect("open tags have accumulators")
                    .keys
                    .entry(key.clone())
                    .or_default()
                    .push(v);
            }
            let value = match self.config.global {
                GlobalMode::Latest => v,
                GlobalMode::WindowMean(n) => {
                    let w = self.windows.entry(key.clone()).or_default();
                    w.push_back(v);
                    while w.len() > n.max(1) {
                        w.pop_front();
                    }
                    w.iter().sum::<f64>() / w.len() as f64
                }
            };
            self.globals.insert(key.clone(), value);
            mutations.push(VarMutation {
                name: phys_var(None, key),
                value,
            });
        }
        self.apply(&mutations);
        mutations
    }

    /// Ordering of the closed-context means of `key` in `a` and `b`.
    pub fn compare(&self, a: &str, b: &str, key: &str) -> Result<Ordering, CompareError> {
        let mean = |tag: &str| -> Result<f64, CompareError> {
            let acc = self.accumulators.get(tag).ok_or_else(|| CompareError::Unvisited(tag.to_string()))?;
            if acc.open {
                return Err(CompareError::Unclosed(tag.to_string()));
            }
            acc.mean(key).ok_or_else(|| CompareError::Empty {
                tag: tag.to_string(),
                key: key.to_string(),
            })
        };
        Ok(mean(a)?.total_cmp(&mean(b)?))
    }

    fn apply(&mut self, mutations: &[VarMutation]) {
        for m in mutations {
            self.variables.insert(m.name.clone(), m.value);
        }
    }

    fn diag(&mut self, d: Diagnostic) {
        log::warn!("director: {d}");
        self.diagnostics.push(d);
    }

    /// Every `phys_*` variable written so far.
    pub fn variables(&self) -> &BTreeMap<String, f64> {
        &self.variables
    }

    pub fn accumulator(&self, tag: &str) -> Option<&ContextAccumulator> {
        self.accumulators.get(tag)
    }

    pub fn open_tags(&self) -> &[String] {
        &self.open
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn take_diagnostics(&mut self) -> Vec<Diagnostic> {
        std::mem::take(&mut self.diagnostics)
    }

    /// The subset of variables the reader UI may show under the configured policy.
    pub fn displayable(&self) -> BTreeMap<String, f64> {
        match self.config.policy {
            PolicyMode::Biofeedback => self.variables.clone(),
            PolicyMode::Neuroadaptive => self.globals.iter().map(|(k, &v)| (phys_var(None, k), v)).collect(),
            PolicyMode::Empowering | PolicyMode::Covert => BTreeMap::new(),
        }
    }
}

/// Run a whole log through a fresh Director.
pub fn replay(config: DirectorConfig, log: &[Input]) -> Director {
    let mut d = Director::new(config);
    for input in log {
        d.process(input);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(t: f64, key: &str, v: f64) -> StateUpdate {
        StateUpdate::new(t, "test", [(key.to_string(), v)])
    }

    #[test]
    fn dungeon_mean() {
        let mut d = Director::new(DirectorConfig::default());
        d.on_marker(0.0, &Marker::TagStart("DUNGEON".into()));
        for (i, v) in [0.2, 0.4, 0.6].into_iter().enumerate() {
            d.on_state(&update(i as f64 + 0.5, "arousal", v));
        }
        let m = d.on_marker(4.0, &Marker::TagStop("DUNGEON".into()));
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].name, "phys_dungeon_arousal");
        assert!((m[0].value - 0.4).abs() < 1e-12);
        assert!(d.diagnostics().is_empty());
    }

    #[test]
    fn degenerate_closes() {
        let mut d = Director::new(DirectorConfig::default());
        d.on_marker(0.0, &Marker::TagStart("A".into()));
        assert!(d.on_marker(1.0, &Marker::TagStop("A".into())).is_empty());
        assert!(matches!(d.diagnostics()[0], Diagnostic::EmptyClose { .. }));
        assert!(d.variables().is_empty());
        d.on_marker(2.0, &Marker::TagStop("B".into()));
        assert!(matches!(d.diagnostics()[1], Diagnostic::CloseWithoutOpen { .. }));
        d.on_state(&update(3.0, "arousal", f64::NAN));
        assert!(matches!(d.diagnostics()[2], Diagnostic::NonFinite { .. }));
        assert!(d.variables().is_empty());
    }

    #[test]
    fn globals_latest_and_window() {
        let mut d = Director::new(DirectorConfig::default());
        d.on_state(&update(0.0, "valence", 0.7));
        assert_eq!(d.variables().len(), 1);
        assert_eq!(d.variables()["phys_valence"], 0.7);

        let mut w = Director::new(DirectorConfig {
            global: GlobalMode::WindowMean(5),
            ..Default::default()
        });
        let values: Vec<f64> = (0..10).map(|i| (i * i) as f64 / 7.0).collect();
        for (i, &v) in values.iter().enumerate() {
            w.on_state(&update(i as f64, "k", v));
        }
        let expected = values[5..].iter().sum::<f64>() / 5.0;
        assert!((w.variables()["phys_k"] - expected).abs() < 1e-12);
    }

    #[test]
    fn cumulative_and_reset() {
        let run = |reset: bool| {
            let mut cfg = DirectorConfig::default();
            if reset {
                cfg.reset_tags.insert("T".into());
            }
            let mut d = Director::new(cfg);
            for (visit, v) in [(0.0, 1.0), (10.0, 3.0)] {
                d.on_marker(visit, &Marker::TagStart("T".into()));
                d.on_state(&update(visit + 1.0, "x", v));
                d.on_marker(visit + 2.0, &Marker::TagStop("T".into()));
            }
            d.variables()["phys_t_x"]
        };
        assert_eq!(run(false), 2.0);
        assert_eq!(run(true), 3.0);
    }

    #[test]
    fn compare_contexts() {
        let mut d = Director::new(DirectorConfig::default());
        for (tag, v, t0) in [("DUNGEON", 0.8, 0.0), ("FOREST", 0.2, 10.0)] {
            d.on_marker(t0, &Marker::TagStart(tag.into()));
            d.on_state(&update(t0 + 1.0, "arousal", v));
            d.on_marker(t0 + 2.0, &Marker::TagStop(tag.into()));
        }
        assert_eq!(d.compare("DUNGEON", "FOREST", "arousal"), Ok(Ordering::Greater));
        assert_eq!(d.compare("DUNGEON", "DUNGEON", "arousal"), Ok(Ordering::Equal));
        assert!(matches!(d.compare("DUNGEON", "CAVE", "arousal"), Err(CompareError::Unvisited(_))));
        assert!(matches!(d.compare("DUNGEON", "FOREST", "valence"), Err(CompareError::Empty { .. })));
        d.on_marker(20.0, &Marker::TagStart("FOREST".into()));
        assert!(matches!(d.compare("DUNGEON", "FOREST", "arousal"), Err(CompareError::Unclosed(_))));
    }

    #[test]
    fn merge_puts_markers_first_on_ties() {
        let log = merge(
            [(1.0, Marker::TagStop("A".into())), (0.0, Marker::TagStart("A".into()))],
            [update(1.0, "x", 5.0), update(0.5, "x", 1.0)],
        );
        let ts: Vec<(f64, u8)> = log.iter().map(|i| (i.t(), i.rank())).collect();
        assert_eq!(ts, vec![(0.0, 0), (0.5, 1), (1.0, 0), (1.0, 1)]);
        let d = replay(DirectorConfig::default(), &log);
        assert_eq!(d.variables()["phys_a_x"], 1.0);
    }

    #[test]
    fn policy_filters() {
        let mut d = Director::new(DirectorConfig::default());
        d.on_marker(0.0, &Marker::TagStart("A".into()));
        d.on_state(&update(0.5, "x", 1.0));
        d.on_marker(1.0, &Marker::TagStop("A".into()));
        assert_eq!(d.displayable().keys().collect::<Vec<_>>(), vec!["phys_x"]);
        d.config.policy = PolicyMode::Biofeedback;
        assert_eq!(d.displayable().len(), 2);
        d.config.policy = PolicyMode::Empowering;
        assert!(d.displayable().is_empty());
        assert!(PolicyMode::Covert.check(false).is_err());
        assert!(PolicyMode::Covert.check(true).is_ok());
    }
}
