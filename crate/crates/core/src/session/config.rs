//! Session configuration, read from TOML.
//!
//! ```toml
//! story = "stories/pets.pif"
//! policy = "neuroadaptive"          # biofeedback | neuroadaptive | empowering | covert
//! ui = "127.0.0.1:8080"
//! record = "session.pifrec"         # optional
//!
//! [input]                           # exactly one of live / replay / simulator
//! simulator = { seed = 7 }
//!
//! [models]
//! arousal = "models/arousal.json"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::director::{DirectorConfig, GlobalMode, PolicyMode};
use crate::simulator::GroundTruth;

pub const DEFAULT_UI_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReplaySpeed {
    #[default]
    Realtime,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorInput {
    #[serde(default)]
    pub seed: u64,
    /// Optional profile JSON; a typical subject otherwise.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    /// Initial ground truth.
    #[serde(default)]
    pub truth: GroundTruth,
    /// Rate of the ground-truth `state` stream; 0 disables it.
    #[serde(default = "default_state_rate")]
    pub state_rate: f64,
}

fn default_state_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSource {
    /// `host:port` of a transport server; every known sensor and state stream is subscribed.
    Live(String),
    Replay { path: PathBuf, speed: ReplaySpeed },
    Simulator(SimulatorInput),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    live: Option<String>,
    replay: Option<PathBuf>,
    #[serde(default)]
    speed: ReplaySpeed,
    simulator: Option<SimulatorInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectorSection {
    #[serde(default = "default_global")]
    pub global: GlobalMode,
    #[serde(default)]
    pub reset_tags: BTreeSet<String>,
}

fn default_global() -> GlobalMode {
    GlobalMode::Latest
}

impl Default for DirectorSection {
    fn default() -> Self {
        DirectorSection {
            global: default_global(),
            reset_tags: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    story: PathBuf,
    input: RawInput,
    #[serde(default)]
    models: BTreeMap<String, PathBuf>,
    #[serde(default)]
    policy: PolicyMode,
    #[serde(default)]
    allow_covert: bool,
    #[serde(default = "default_ui")]
    ui: String,
    record: Option<PathBuf>,
    reader_log: Option<PathBuf>,
    #[serde(default)]
    director: DirectorSection,
    #[serde(default = "default_cadence")]
    cadence_s: f64,
    #[serde(default = "default_window")]
    window_s: f64,
    #[serde(default = "default_debounce")]
    debounce_s: f64,
}

fn default_ui() -> String {
    DEFAULT_UI_ADDR.into()
}
fn default_cadence() -> f64 {
    1.0
}
fn default_window() -> f64 {
    30.0
}
fn default_debounce() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub story: PathBuf,
    pub input: InputSource,
    /// construct name → model file
    pub models: BTreeMap<String, PathBuf>,
    pub policy: PolicyMode,
    pub allow_covert: bool,
    pub ui: String,
    pub record: Option<PathBuf>,
    pub reader_log: Option<PathBuf>,
    pub director: DirectorSection,
    /// Model evaluation period.
    pub cadence_s: f64,
    /// Length of the window each model evaluation looks back over.
    pub window_s: f64,
    /// Minimum time between page turns.
    pub debounce_s: f64,
}

impl SessionConfig {
    /// A config with defaults for everything but the story and input.
    pub fn new(story: impl Into<PathBuf>, input: InputSource) -> Self {
        SessionConfig {
            story: story.into(),
            input,
            models: BTreeMap::new(),
            policy: PolicyMode::default(),
            allow_covert: false,
            ui: default_ui(),
            record: None,
            reader_log: None,
            director: DirectorSection::default(),
            cadence_s: default_cadence(),
            window_s: default_window(),
            debounce_s: default_debounce(),
        }
    }

    /// Parse TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<SessionConfig, SessionError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        let rel = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let i = raw.input;
        let input = match (i.live, i.replay, i.simulator) {
            (Some(addr), None, None) => InputSource::Live(addr),
            (None, Some(path), None) => InputSource::Replay {
                path: rel(path),
                speed: i.speed,
            },
            (None, None, Some(mut sim)) => {
                sim.profile = sim.profile.map(rel);
                InputSource::Simulator(sim)
            }
            (live, replay, sim) => {
                let n = live.is_some() as usize + replay.is_some() as usize + sim.is_some() as usize;
                return Err(SessionError::Config(format!(
                    "[input] needs exactly one of live, replay, simulator; found {n}"
                )));
            }
        };
        let config = SessionConfig {
            story: rel(raw.story),
            input,
            models: raw.models.into_iter().map(|(k, p)| (k, rel(p))).collect(),
            policy: raw.policy,
            allow_covert: raw.allow_covert,
            ui: raw.ui,
            record: raw.record.map(rel),
            reader_log: raw.reader_log.map(rel),
            director: raw.director,
            cadence_s: raw.cadence_s,
            window_s: raw.window_s,
            debounce_s: raw.debounce_s,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<SessionConfig, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        SessionConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Static checks; files are checked when the session starts.
    pub fn validate(&self) -> Result<(), SessionError> {
        self.policy.check(self.allow_covert)?;
        for (name, v) in [("cadence_s", self.cadence_s), ("window_s", self.window_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SessionError::Config(format!("{name} must be > 0")));
            }
        }
        if !(self.debounce_s.is_finite() && self.debounce_s >= 0.0) {
            return Err(SessionError::Config("debounce_s must be >= 0".into()));
        }
        if let InputSource::Simulator(s) = &self.input {
            if !(s.state_rate.is_finite() && s.state_rate >= 0.0) {
                return Err(SessionError::Config("simulator.state_rate must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn director_config(&self) -> DirectorConfig {
        DirectorConfig {
            global: self.director.global,
            reset_tags: self.director.reset_tags.clone(),
            policy: self.policy,
        }
    }

    pub fn is_simulator(&self) -> bool {
        matches!(self.input, InputSource::Simulator(_))
    }
}
