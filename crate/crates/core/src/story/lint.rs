//! Authoring diagnostics for parsed stories. Lint never fails.

use std::collections::{BTreeSet, VecDeque};

use super::ast::{StoryGraph, END};
use super::diag::Diagnostic;
use super::expr::PHYS_PREFIX;

pub fn lint(graph: &StoryGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let reachable = reachable_from(graph, &graph.entry_knot, |_| true);
    for k in &graph.knots {
        if !reachable.contains(k.name.as_str()) {
            out.push(Diagnostic::warning(
                graph.knot_pos(&k.name),
                format!("unreachable knot `{}`", k.name),
            ));
        }
    }

    // Reverse search from every knot that may finish the story.
    let mut can_finish: BTreeSet<&str> = graph
        .knots
        .iter()
        .filter(|k| k.can_end())
        .map(|k| k.name.as_str())
        .collect();
    loop {
        let before = can_finish.len();
        for k in &graph.knots {
            if k.successors().iter().any(|s| can_finish.contains(s)) {
                can_finish.insert(&k.name);
            }
        }
        if can_finish.len() == before {
            break;
        }
    }
    for k in &graph.knots {
        if !can_finish.contains(k.name.as_str()) {
            out.push(Diagnostic::warning(
                graph.knot_pos(&k.name),
                format!("knot `{}` has no path to an ending", k.name),
            ));
        }
    }

    let reads: Vec<(&str, &str)> = graph
        .knots
        .iter()
        .flat_map(|k| k.variable_reads().into_iter().map(move |v| (k.name.as_str(), v)))
        .collect();
    for tag in &graph.tags {
        let prefix = format!("{PHYS_PREFIX}{}_", tag.to_ascii_lowercase());
        let readers: BTreeSet<&str> = reads
            .iter()
            .filter(|(_, v)| v.starts_with(&prefix))
            .map(|(k, _)| *k)
            .collect();
        let pos = graph.source_map.tag_opens.get(tag).copied().unwrap_or_default();
        if readers.is_empty() {
            out.push(Diagnostic::info(
                pos,
                format!("context tag `{tag}` is recorded but never used by a condition or automatic choice"),
            ));
            continue;
        }
        // A reader reachable without crossing the tag may compare against an empty context.
        let avoiding = reachable_from(graph, &graph.entry_knot, |k| {
            graph
                .knot(k)
                .is_some_and(|knot| !knot.tag_spans.iter().any(|s| &s.tag == tag))
        });
        for r in readers {
            if avoiding.contains(r) {
                out.push(Diagnostic::info(
                    graph.knot_pos(r),
                    format!("knot `{r}` may read context `{tag}` before it has been recorded"),
                ));
            }
        }
    }
    out.sort_by_key(|d| (d.line, d.col));
    out
}

/// Knots reachable from `start`, only expanding through knots accepted by `pass`.
fn reachable_from<'a>(
    graph: &'a StoryGraph,
    start: &'a str,
    pass: impl Fn(&str) -> bool,
) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    if graph.knot(start).is_some() && pass(start) {
        seen.insert(start);
        queue.push_back(start);
    }
    while let Some(name) = queue.pop_front() {
        let Some(knot) = graph.knot(name) else {
            continue;
        };
        for s in knot.successors() {
            if s != END && pass(s) && seen.insert(s) {
                queue.push_back(s);
            }
        }
    }
    seen
}
