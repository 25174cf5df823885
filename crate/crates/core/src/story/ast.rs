//! Parsed story graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::expr::{Expr, Type, Value, PHYS_PREFIX};

/// Divert target that ends the story.
pub const END: &str = "END";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoryGraph {
    /// Story identifier, emitted on the `STORY:<id>` marker.
    pub id: String,
    pub entry_knot: String,
    pub variables: Vec<VariableDecl>,
    /// Context tags declared by `##NAME_START` lines, first-occurrence order.
    pub tags: Vec<String>,
    pub knots: Vec<Knot>,
    /// Source positions. Ignored by structural equality.
    #[serde(skip)]
    pub source_map: SourceMap,
}

impl PartialEq for StoryGraph {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.entry_knot == other.entry_knot
            && self.variables == other.variables
            && self.tags == other.tags
            && self.knots == other.knots
    }
}

#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    pub knots: BTreeMap<String, Pos>,
    pub tag_opens: BTreeMap<String, Pos>,
    /// Position of each choice, keyed by (knot, index); auto choices use index `usize::MAX`.
    pub choices: BTreeMap<(String, usize), Pos>,
}

/// 1-based line and column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub initial: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub name: String,
    pub pages: Vec<Page>,
    pub choices: Vec<Choice>,
    pub auto: Option<AutoChoice>,
    /// Unconditional continuation once the pages (and any displayed choices) are exhausted.
    pub divert: Option<String>,
    pub tag_spans: Vec<TagSpan>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<PageItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PageItem {
    /// One line of display text.
    Line(Vec<Segment>),
    /// `~ name = expr`, executed when the page is shown.
    Assign { name: String, value: Expr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Text(String),
    /// Inline `{cond: then | otherwise}`.
    Switch {
        cond: Expr,
        then: String,
        otherwise: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSpan {
    pub tag: String,
    /// Inclusive page range.
    pub start_page: usize,
    pub end_page: usize,
}

impl TagSpan {
    pub fn contains(&self, page: usize) -> bool {
        self.start_page <= page && page <= self.end_page
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub target: String,
    pub condition: Option<Expr>,
}

/// A branch selected by the engine instead of the reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoChoice {
    pub rule: AutoRule,
    /// argmax/argmin: one target per operand. threshold: `[above, otherwise]`.
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoMode {
    Argmax,
    Argmin,
    Threshold,
}

impl AutoMode {
    pub fn keyword(&self) -> &'static str {
        match self {
            AutoMode::Argmax => "argmax",
            AutoMode::Argmin => "argmin",
            AutoMode::Threshold => "threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoRule {
    pub mode: AutoMode,
    /// Canonical variable names (`phys.valence@CAT` is stored as `phys_cat_valence`).
    pub operands: Vec<String>,
    pub threshold: Option<f64>,
}

impl StoryGraph {
    pub fn knot(&self, name: &str) -> Option<&Knot> {
        self.knots.iter().find(|k| k.name == name)
    }

    pub fn knot_index(&self, name: &str) -> Option<usize> {
        self.knots.iter().position(|k| k.name == name)
    }

    pub fn declared_type(&self, name: &str) -> Option<Type> {
        if name.starts_with(PHYS_PREFIX) {
            return Some(Type::Number);
        }
        self.variables
            .iter()
            .find(|v| v.name == name)
            .map(|v| v.initial.ty())
    }

    pub fn knot_pos(&self, name: &str) -> Pos {
        self.source_map.knots.get(name).copied().unwrap_or_default()
    }
}

impl Knot {
    /// All knot names this knot may continue to (including `END`).
    pub fn successors(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.choices.iter().map(|c| c.target.as_str()).collect();
        if let Some(auto) = &self.auto {
            out.extend(auto.targets.iter().map(String::as_str));
        }
        if let Some(d) = &self.divert {
            out.push(d);
        }
        out
    }

    /// True when reaching the last page may finish the story.
    pub fn can_end(&self) -> bool {
        let conditional_only = self.choices.iter().all(|c| c.condition.is_some());
        self.auto.is_none() && self.divert.is_none() && conditional_only
            || self.successors().contains(&END)
    }

    /// Spans containing `page`, outermost first.
    pub fn spans_at(&self, page: usize) -> Vec<&TagSpan> {
        self.tag_spans.iter().filter(|s| s.contains(page)).collect()
    }

    /// Every expression that appears in this knot.
    pub fn expressions(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        for page in &self.pages {
            for item in &page.items {
                match item {
                    PageItem::Line(segments) => {
                        for seg in segments {
                            if let Segment::Switch { cond, .. } = seg {
                                out.push(cond);
                            }
                        }
                    }
                    PageItem::Assign { value, .. } => out.push(value),
                }
            }
        }
        out.extend(self.choices.iter().filter_map(|c| c.condition.as_ref()));
        out
    }

    /// Variable names read by this knot (conditions, assignments, auto rules).
    pub fn variable_reads(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .expressions()
            .into_iter()
            .flat_map(|e| e.variables())
            .collect();
        if let Some(auto) = &self.auto {
            out.extend(auto.rule.operands.iter().map(String::as_str));
        }
        out
    }
}
