//! Labels carried on the `pif-markers` stream.

use std::fmt;
use std::str::FromStr;

use crate::story::EngineEvent;

/// Name of the marker stream emitted by a session.
pub const MARKER_STREAM: &str = "pif-markers";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Marker {
    Story(String),
    Knot(String),
    Page(usize),
    TagStart(String),
    TagStop(String),
    Branch(String),
    /// Ground truth embedded by the simulator: `LABEL:<construct>=<class>`.
    Label { construct: String, class: String },
    /// Anything else; kept verbatim so replays never lose a marker.
    Other(String),
}

impl Marker {
    /// Marker forwarded for an engine event; events without a transport label yield `None`.
    pub fn from_event(event: &EngineEvent) -> Option<Marker> {
        Some(match event {
            EngineEvent::StoryStarted { story } => Marker::Story(story.clone()),
            EngineEvent::KnotEntered { knot } => Marker::Knot(knot.clone()),
            EngineEvent::PageShown { page, .. } => Marker::Page(*page),
            EngineEvent::TagOpened { tag } => Marker::TagStart(tag.clone()),
            EngineEvent::TagClosed { tag } => Marker::TagStop(tag.clone()),
            EngineEvent::BranchTaken { target } => Marker::Branch(target.clone()),
            _ => return None,
        })
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marker::Story(s) => write!(f, "STORY:{s}"),
            Marker::Knot(k) => write!(f, "KNOT:{k}"),
            Marker::Page(n) => write!(f, "PAGE:{n}"),
            Marker::TagStart(t) => write!(f, "TAG_START:{t}"),
            Marker::TagStop(t) => write!(f, "TAG_STOP:{t}"),
            Marker::Branch(b) => write!(f, "BRANCH:{b}"),
            Marker::Label { construct, class } => write!(f, "LABEL:{construct}={class}"),
            Marker::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Marker {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some((head, rest)) = s.split_once(':') else {
            return Ok(Marker::Other(s.to_string()));
        };
        let rest = rest.to_string();
        Ok(match head {
            "STORY" => Marker::Story(rest),
            "KNOT" => Marker::Knot(rest),
            "PAGE" => match rest.parse() {
                Ok(n) => Marker::Page(n),
                Err(_) => Marker::Other(s.to_string()),
            },
            "TAG_START" => Marker::TagStart(rest),
            "TAG_STOP" => Marker::TagStop(rest),
            "BRANCH" => Marker::Branch(rest),
            "LABEL" => match rest.split_once('=') {
                Some((c, v)) => Marker::Label {
                    construct: c.to_string(),
                    class: v.to_string(),
                },
                None => Marker::Other(s.to_string()),
            },
            _ => Marker::Other(s.to_string()),
        })
    }
}
