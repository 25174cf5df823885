//! Deterministic execution of a parsed story.
//!
//! [`advance`] is a pure function of `(graph, state, event)`: the same inputs
//! always produce the same successor state and event list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;
use super::expr::{EvalError, Value, VariableStore, PHYS_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ReaderEvent {
    NextPage,
    Choose(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    StoryStarted { story: String },
    KnotEntered { knot: String },
    PageShown { story: String, knot: String, page: usize },
    TagOpened { tag: String },
    TagClosed { tag: String },
    ChoicePresented { labels: Vec<String> },
    BranchTaken { target: String },
    /// Automatic choice operands tied; the first listed candidate was taken.
    TieBroken { candidates: Vec<String>, chosen: String },
    StoryEnded { story: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvanceError {
    #[error("the story has ended")]
    Finished,
    #[error("choices are displayed: choose one to continue")]
    MustChoose,
    #[error("no choices are displayed on this page")]
    NoChoices,
    #[error("choice {index} out of range ({available} displayed)")]
    ChoiceOutOfRange { index: usize, available: usize },
    #[error("automatic choice in knot `{knot}`: {source}")]
    Auto { knot: String, source: EvalError },
    #[error("state refers to unknown knot `{0}`")]
    UnknownKnot(String),
}

/// Position of a reader in a story plus the variable store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryState {
    pub knot: String,
    pub page: usize,
    pub variables: VariableStore,
    /// Indices into the knot's choices that are currently displayed.
    pub displayed: Vec<usize>,
    pub finished: bool,
}

impl StoryState {
    pub fn current(&self) -> (&str, usize) {
        (&self.knot, self.page)
    }

    /// Director-only write path; rejects names outside the `phys_` namespace.
    pub fn set_phys(&mut self, name: &str, value: f64) -> bool {
        if !name.starts_with(PHYS_PREFIX) {
            return false;
        }
        self.variables.set(name, Value::Number(value));
        true
    }
}

/// A page as presented to a reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPage {
    pub knot: String,
    pub page_index: usize,
    pub text: String,
    pub choices: Vec<String>,
    pub is_last: bool,
    pub finished: bool,
}

/// Receives each event as it is emitted and returns `phys_*` values to set right away,
/// so a Director can update context variables before an automatic choice reads them.
pub type EventHook<'h> = &'h mut dyn FnMut(&EngineEvent) -> Vec<(String, f64)>;

struct Emitter<'h> {
    events: Vec<EngineEvent>,
    hook: Option<EventHook<'h>>,
}

impl Emitter<'_> {
    fn push(&mut self, state: &mut StoryState, e: EngineEvent) {
        if let Some(hook) = &mut self.hook {
            for (name, value) in hook(&e) {
                state.set_phys(&name, value);
            }
        }
        self.events.push(e);
    }
}

pub fn start(graph: &StoryGraph) -> (StoryState, Vec<EngineEvent>) {
    let mut variables = VariableStore::new();
    for v in &graph.variables {
        variables.set(v.name.clone(), v.initial);
    }
    start_with(graph, variables)
}

/// Start with a pre-populated store (e.g. Director values recorded before the story begins).
pub fn start_with(graph: &StoryGraph, mut variables: VariableStore) -> (StoryState, Vec<EngineEvent>) {
    for v in &graph.variables {
        if variables.get(&v.name).is_none() {
            variables.set(v.name.clone(), v.initial);
        }
    }
    let mut state = StoryState {
        knot: graph.entry_knot.clone(),
        page: 0,
        variables,
        displayed: Vec::new(),
        finished: false,
    };
    let mut out = Emitter {
        events: Vec::new(),
        hook: None,
    };
    out.push(
        &mut state,
        EngineEvent::StoryStarted {
            story: graph.id.clone(),
        },
    );
    let knot = graph.knot(&graph.entry_knot).expect("validated graph has its entry knot");
    enter_knot(graph, knot, &mut state, &mut out);
    (state, out.events)
}

pub fn advance(
    graph: &StoryGraph,
    state: &StoryState,
    event: ReaderEvent,
) -> Result<(StoryState, Vec<EngineEvent>), AdvanceError> {
    run_advance(graph, state, event, None)
}

/// [`advance`], calling `hook` on every event as it happens. When a knot is left,
/// its open tags close before an automatic choice is resolved, so values the hook
/// sets on TagClosed are visible to that choice.
pub fn advance_with(
    graph: &StoryGraph,
    state: &StoryState,
    event: ReaderEvent,
    hook: EventHook<'_>,
) -> Result<(StoryState, Vec<EngineEvent>), AdvanceError> {
    run_advance(graph, state, event, Some(hook))
}

fn run_advance(
    graph: &StoryGraph,
    state: &StoryState,
    event: ReaderEvent,
    hook: Option<EventHook<'_>>,
) -> Result<(StoryState, Vec<EngineEvent>), AdvanceError> {
    if state.finished {
        return Err(AdvanceError::Finished);
    }
    let knot = graph
        .knot(&state.knot)
        .ok_or_else(|| AdvanceError::UnknownKnot(state.knot.clone()))?;
    let mut next = state.clone();
    let mut out = Emitter { events: Vec::new(), hook };
    let last = knot.pages.len() - 1;
    match event {
        ReaderEvent::NextPage if state.page < last => {
            let from = state.page;
            let to = from + 1;
            for span in knot.spans_at(from).into_iter().rev() {
                if !span.contains(to) {
                    out.push(&mut next, EngineEvent::TagClosed { tag: span.tag.clone() });
                }
            }
            for span in knot.spans_at(to) {
                if !span.contains(from) {
                    out.push(&mut next, EngineEvent::TagOpened { tag: span.tag.clone() });
                }
            }
            next.page = to;
            show_page(graph, knot, &mut next, &mut out);
        }
        ReaderEvent::NextPage => {
            if !state.displayed.is_empty() {
                return Err(AdvanceError::MustChoose);
            }
            close_spans(knot, &mut next, &mut out);
            let target = if let Some(auto) = &knot.auto {
                let (target, tie) = pick_auto(auto, &next.variables).map_err(|source| AdvanceError::Auto {
                    knot: knot.name.clone(),
                    source,
                })?;
                if let Some(tie) = tie {
                    out.push(&mut next, tie);
                }
                target
            } else if let Some(d) = &knot.divert {
                d.clone()
            } else {
                END.to_string()
            };
            leave_knot(graph, target, &mut next, &mut out);
        }
        ReaderEvent::Choose(index) => {
            if state.page < last || state.displayed.is_empty() {
                return Err(AdvanceError::NoChoices);
            }
            let Some(&choice) = state.displayed.get(index) else {
                return Err(AdvanceError::ChoiceOutOfRange {
                    index,
                    available: state.displayed.len(),
                });
            };
            let target = knot.choices[choice].target.clone();
            close_spans(knot, &mut next, &mut out);
            leave_knot(graph, target, &mut next, &mut out);
        }
    }
    Ok((next, out.events))
}

/// The chosen target, plus a TieBroken event when operands tied.
fn pick_auto(auto: &AutoChoice, vars: &VariableStore) -> Result<(String, Option<EngineEvent>), EvalError> {
    let values = auto
        .rule
        .operands
        .iter()
        .map(|name| match vars.get(name) {
            Some(Value::Number(n)) => Ok(n),
            Some(other) => Err(EvalError::TypeMismatch {
                op: "auto",
                expected: super::expr::Type::Number,
                found: other.ty(),
            }),
            None => Err(EvalError::Unbound(name.clone())),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let pick = |better: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if better(v, values[best]) {
                best = i;
            }
        }
        best
    };
    let chosen = match auto.rule.mode {
        AutoMode::Argmax => pick(|a, b| a > b),
        AutoMode::Argmin => pick(|a, b| a < b),
        AutoMode::Threshold => {
            let t = auto.rule.threshold.unwrap_or_default();
            let target = if values[0] > t { &auto.targets[0] } else { &auto.targets[1] };
            return Ok((target.clone(), None));
        }
    };
    let tied: Vec<String> = values
        .iter()
        .zip(&auto.targets)
        .filter(|(v, _)| **v == values[chosen])
        .map(|(_, t)| t.clone())
        .collect();
    let tie = (tied.len() > 1).then(|| EngineEvent::TieBroken {
        candidates: tied,
        chosen: auto.targets[chosen].clone(),
    });
    Ok((auto.targets[chosen].clone(), tie))
}

/// Close the tags open on the current page, innermost first.
fn close_spans(knot: &Knot, state: &mut StoryState, out: &mut Emitter) {
    for span in knot.spans_at(state.page).into_iter().rev() {
        out.push(state, EngineEvent::TagClosed { tag: span.tag.clone() });
    }
}

fn leave_knot(graph: &StoryGraph, target: String, state: &mut StoryState, out: &mut Emitter) {
    out.push(state, EngineEvent::BranchTaken { target: target.clone() });
    state.displayed.clear();
    if target == END {
        state.finished = true;
        out.push(
            state,
            EngineEvent::StoryEnded {
                story: graph.id.clone(),
            },
        );
        return;
    }
    let next = graph.knot(&target).expect("validated divert target");
    state.knot = target;
    enter_knot(graph, next, state, out);
}

fn enter_knot(graph: &StoryGraph, knot: &Knot, state: &mut StoryState, out: &mut Emitter) {
    state.page = 0;
    out.push(
        state,
        EngineEvent::KnotEntered {
            knot: knot.name.clone(),
        },
    );
    for span in knot.spans_at(0) {
        out.push(state, EngineEvent::TagOpened { tag: span.tag.clone() });
    }
    show_page(graph, knot, state, out);
}

fn show_page(graph: &StoryGraph, knot: &Knot, state: &mut StoryState, out: &mut Emitter) {
    for item in &knot.pages[state.page].items {
        if let PageItem::Assign { name, value } = item {
            // Declared, type-checked targets; a failing expression leaves the variable unchanged.
            if let Ok(v) = value.eval(&state.variables) {
                state.variables.set(name.clone(), v);
            }
        }
    }
    out.push(
        state,
        EngineEvent::PageShown {
            story: graph.id.clone(),
            knot: knot.name.clone(),
            page: state.page,
        },
    );
    state.displayed.clear();
    if state.page + 1 == knot.pages.len() {
        state.displayed = visible_choices(knot, &state.variables);
        if !state.displayed.is_empty() {
            let labels = state
                .displayed
                .iter()
                .map(|&i| knot.choices[i].label.clone())
                .collect();
            out.push(state, EngineEvent::ChoicePresented { labels });
        }
    }
}

/// Choices whose condition holds. A condition that cannot be evaluated yet
/// (e.g. a Director value not received) hides its choice.
fn visible_choices(knot: &Knot, vars: &VariableStore) -> Vec<usize> {
    knot.choices
        .iter()
        .enumerate()
        .filter(|(_, c)| match &c.condition {
            None => true,
            Some(e) => matches!(e.eval(vars), Ok(Value::Bool(true))),
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn render_page(graph: &StoryGraph, state: &StoryState) -> RenderedPage {
    let knot = graph.knot(&state.knot);
    let text = knot
        .and_then(|k| k.pages.get(state.page))
        .map(|p| render_text(p, &state.variables))
        .unwrap_or_default();
    let choices = knot
        .map(|k| state.displayed.iter().map(|&i| k.choices[i].label.clone()).collect())
        .unwrap_or_default();
    RenderedPage {
        knot: state.knot.clone(),
        page_index: state.page,
        text,
        choices,
        is_last: knot.is_some_and(|k| state.page + 1 == k.pages.len()),
        finished: state.finished,
    }
}

fn render_text(page: &Page, vars: &VariableStore) -> String {
    let mut lines = Vec::new();
    for item in &page.items {
        let PageItem::Line(segments) = item else {
            continue;
        };
        let mut line = String::new();
        for seg in segments {
            match seg {
                Segment::Text(t) => line.push_str(t),
                Segment::Switch { cond, then, otherwise } => {
                    let branch = match cond.eval(vars) {
                        Ok(Value::Bool(true)) => then,
                        _ => otherwise,
                    };
                    line.push_str(branch);
                }
            }
        }
        lines.push(line);
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::parser::parse_str;

    const STORY: &str = "\
VAR courage = 5
== start ==
Crossroads.
* [Dungeon] -> dungeon
* [Forest] -> forest
== dungeon ==
Stairs.
---
##DUNGEON_START
Dark.
---
Darker.
##DUNGEON_STOP
---
Light again.
-> forest
== forest ==
##FOREST_START
Trees.
##FOREST_STOP
*auto {argmax phys.arousal@DUNGEON, phys.arousal@FOREST} -> dungeon_end, forest_end
== dungeon_end ==
Danger from below.
== forest_end ==
Danger from the trees.
";

    fn tags(events: &[EngineEvent]) -> Vec<String> {
        events
            .iter()
            .filter_map(|e| match e {
                EngineEvent::TagOpened { tag } => Some(format!("+{tag}")),
                EngineEvent::TagClosed { tag } => Some(format!("-{tag}")),
                EngineEvent::PageShown { page, .. } => Some(format!("p{page}")),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn start_state() {
        let g = parse_str(STORY).unwrap();
        let (s, ev) = start(&g);
        assert_eq!(s.current(), ("start", 0));
        assert_eq!(s.variables.get("courage"), Some(Value::Number(5.0)));
        assert!(matches!(ev[0], EngineEvent::StoryStarted { .. }));
        assert!(ev.iter().any(|e| matches!(e, EngineEvent::ChoicePresented { labels } if labels.len() == 2)));
    }

    #[test]
    fn entry_inside_span_opens_tag() {
        let g = parse_str("== a ==\n##T_START\nx\n##T_STOP\n").unwrap();
        let (_, ev) = start(&g);
        let opened = ev.iter().filter(|e| matches!(e, EngineEvent::TagOpened { .. })).count();
        assert_eq!(opened, 1);
    }

    #[test]
    fn choose_and_tag_boundaries() {
        let g = parse_str(STORY).unwrap();
        let (s, _) = start(&g);
        let (s, ev) = advance(&g, &s, ReaderEvent::Choose(0)).unwrap();
        assert!(ev.contains(&EngineEvent::BranchTaken { target: "dungeon".into() }));
        let (s, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(tags(&ev), vec!["+DUNGEON", "p1"]);
        let (s, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(tags(&ev), vec!["p2"]);
        let (s, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(tags(&ev), vec!["-DUNGEON", "p3"]);
        let (mut s, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(tags(&ev), vec!["+FOREST", "p0"]);
        assert!(s.set_phys("phys_dungeon_arousal", 0.7));
        assert!(s.set_phys("phys_forest_arousal", 0.3));
        let (s, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(tags(&ev), vec!["-FOREST", "p0"]);
        assert_eq!(s.knot, "dungeon_end");
        assert!(!ev.iter().any(|e| matches!(e, EngineEvent::ChoicePresented { .. })));
        let (s, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert!(s.finished);
        assert!(matches!(ev.last(), Some(EngineEvent::StoryEnded { .. })));
        assert_eq!(advance(&g, &s, ReaderEvent::NextPage), Err(AdvanceError::Finished));
    }

    #[test]
    fn auto_argmax_picks_cat() {
        let src = "== pet ==\nA box.\n*auto {argmax phys.valence@CAT, phys.valence@DOG} -> kitten, puppy\n== kitten ==\nk\n== puppy ==\np\n";
        let g = parse_str(src).unwrap();
        let (mut s, _) = start(&g);
        s.set_phys("phys_cat_valence", 0.7);
        s.set_phys("phys_dog_valence", 0.3);
        let (s2, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(s2.knot, "kitten");
        assert!(ev.contains(&EngineEvent::BranchTaken { target: "kitten".into() }));
        assert!(!ev.iter().any(|e| matches!(e, EngineEvent::ChoicePresented { .. })));

        s.set_phys("phys_dog_valence", 0.7);
        let (s3, ev) = advance(&g, &s, ReaderEvent::NextPage).unwrap();
        assert_eq!(s3.knot, "kitten");
        assert!(ev.iter().any(|e| matches!(e, EngineEvent::TieBroken { chosen, .. } if chosen == "kitten")));
    }

    #[test]
    fn auto_with_missing_value_fails() {
        let src = "== pet ==\nA box.\n*auto {argmin phys.valence@CAT, phys.valence@DOG} -> END, END\n";
        let g = parse_str(src).unwrap();
        let (s, _) = start(&g);
        let err = advance(&g, &s, ReaderEvent::NextPage).unwrap_err();
        assert!(err.to_string().contains("phys_cat_valence"));
    }

    #[test]
    fn illegal_events() {
        let g = parse_str(STORY).unwrap();
        let (s, _) = start(&g);
        assert_eq!(advance(&g, &s, ReaderEvent::NextPage), Err(AdvanceError::MustChoose));
        assert_eq!(
            advance(&g, &s, ReaderEvent::Choose(2)),
            Err(AdvanceError::ChoiceOutOfRange { index: 2, available: 2 })
        );
        let (s, _) = advance(&g, &s, ReaderEvent::Choose(0)).unwrap();
        assert_eq!(advance(&g, &s, ReaderEvent::Choose(0)), Err(AdvanceError::NoChoices));
    }

    #[test]
    fn conditions_and_assignments() {
        let src = "\
VAR coins = 0
== a ==
~ coins = coins + 2
You have {coins > 1: many | few} coins.
* {coins > 5} [Buy] -> END
* {phys_arousal > 0.5} [Panic] -> END
* [Leave] -> END
";
        let g = parse_str(src).unwrap();
        let (s, _) = start(&g);
        assert_eq!(s.variables.number("coins"), Some(2.0));
        let page = render_page(&g, &s);
        assert_eq!(page.text, "You have many coins.");
        assert_eq!(page.choices, vec!["Leave".to_string()]);
        let (s, _) = advance(&g, &s, ReaderEvent::Choose(0)).unwrap();
        assert!(s.finished);
    }

    #[test]
    fn replay_is_deterministic() {
        let g = parse_str(STORY).unwrap();
        let log = [ReaderEvent::Choose(1), ReaderEvent::NextPage];
        let run = || {
            let (mut s, mut all) = start(&g);
            s.set_phys("phys_dungeon_arousal", 0.1);
            s.set_phys("phys_forest_arousal", 0.1);
            for e in log {
                let (n, ev) = advance(&g, &s, e).unwrap();
                all.extend(ev);
                s = n;
            }
            (s, all)
        };
        assert_eq!(run(), run());
    }
}
