//! Line-oriented parser for `.pif` stories.
//!
//! ```text
//! VAR courage = 5
//! -> intro                          entry knot (optional, defaults to first knot)
//! == intro ==
//! Text lines, with {courage > 3: inline | switches}.
//! ~ courage = courage + 1
//! ##DUNGEON_START
//! ---                               page break
//! ##DUNGEON_STOP
//! * [Label] -> target
//! * {courage > 3} [Fight] -> fight
//! *auto {argmax phys.valence@CAT, phys.valence@DOG} -> kitten, puppy
//! *auto {threshold phys_arousal 0.6} -> tense, calm
//! -> target                         unconditional divert
//! ```

use std::collections::BTreeSet;

use super::ast::*;
use super::diag::{Diagnostic, ParseErrors, StorySource};
use super::expr::{phys_var, BinOp, Expr, Type, UnOp, Value, PHYS_PREFIX};

pub fn parse(source: &StorySource) -> Result<StoryGraph, ParseErrors> {
    let mut p = Parser::default();
    p.run(&source.text);
    let fail = |diagnostics| ParseErrors {
        origin: source.origin.clone(),
        diagnostics,
    };
    if !p.errors.is_empty() {
        return Err(fail(p.errors));
    }
    let (graph, pending) = p.finish(source.origin.story_id());
    let errors = validate(&graph, pending);
    if errors.is_empty() {
        Ok(graph)
    } else {
        Err(fail(errors))
    }
}

pub fn parse_str(text: &str) -> Result<StoryGraph, ParseErrors> {
    parse(&StorySource::inline(text))
}

#[derive(Default)]
struct KnotBuilder {
    name: String,
    pos: Pos,
    pages: Vec<Page>,
    current: Page,
    /// Page index of the most recent display line, if any.
    last_text_page: Option<usize>,
    choices: Vec<Choice>,
    auto: Option<AutoChoice>,
    divert: Option<String>,
    /// (tag, first text page after the START line, open order, position)
    open_tags: Vec<(String, Option<usize>, usize, Pos)>,
    spans: Vec<(usize, TagSpan)>,
    opened: usize,
    page_break_pos: Option<Pos>,
}

impl KnotBuilder {
    fn in_choices(&self) -> bool {
        !self.choices.is_empty() || self.auto.is_some() || self.divert.is_some()
    }

    fn push_item(&mut self, item: PageItem) {
        if matches!(item, PageItem::Line(_)) {
            let idx = self.pages.len();
            self.last_text_page = Some(idx);
            for open in &mut self.open_tags {
                open.1.get_or_insert(idx);
            }
        }
        self.current.items.push(item);
        self.page_break_pos = None;
    }
}

#[derive(Default)]
struct Parser {
    errors: Vec<Diagnostic>,
    variables: Vec<VariableDecl>,
    entry: Option<(String, Pos)>,
    knots: Vec<Knot>,
    current: Option<KnotBuilder>,
    source_map: SourceMap,
    tags: Vec<String>,
    /// Divert targets to resolve: (target, position).
    targets: Vec<(String, Pos)>,
    /// Variable reads to resolve: (name, position).
    reads: Vec<(String, Pos)>,
    assigns: Vec<(String, Pos, Expr)>,
    conditions: Vec<(Expr, Pos)>,
    duplicate_knots: Vec<(String, Pos)>,
}

fn pos(line: usize, col: usize) -> Pos {
    Pos { line, col }
}

/// Column (1-based, in chars) of byte offset `off` within `line`.
fn col_of(line: &str, off: usize) -> usize {
    line[..off.min(line.len())].chars().count() + 1
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Parser {
    fn err(&mut self, p: Pos, msg: impl Into<String>) {
        self.errors.push(Diagnostic::error(p, msg));
    }

    fn run(&mut self, text: &str) {
        if text.trim().is_empty() {
            self.err(pos(1, 1), "empty story");
            return;
        }
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let indent = raw.len() - raw.trim_start().len();
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let c0 = col_of(raw, indent);
            if let Some(rest) = line.strip_prefix("VAR ") {
                self.var_decl(rest, raw, lineno, c0);
            } else if line.starts_with("==") {
                self.knot_header(line, lineno, c0);
            } else if line.starts_with("##") {
                self.tag_line(line, lineno, c0);
            } else if line == "---" {
                self.page_break(lineno, c0);
            } else if let Some(rest) = line.strip_prefix("->") {
                let target = rest.trim();
                let tc = col_of(raw, raw.find(target).unwrap_or(indent));
                self.divert_line(target, pos(lineno, c0), pos(lineno, tc));
            } else if line.starts_with("*auto") {
                self.auto_line(line, raw, lineno, c0);
            } else if line.starts_with('*') {
                self.choice_line(line, raw, lineno, c0);
            } else if let Some(rest) = line.strip_prefix('~') {
                self.assign_line(rest, raw, lineno, c0);
            } else {
                self.text_line(line, raw, lineno, c0);
            }
        }
        self.close_knot();
        if self.knots.is_empty() && self.errors.is_empty() {
            self.err(pos(1, 1), "empty story");
        }
    }

    fn knot_mut(&mut self, p: Pos, what: &str) -> Option<&mut KnotBuilder> {
        if self.current.is_none() {
            self.err(p, format!("{what} outside of a knot"));
        }
        self.current.as_mut()
    }

    fn var_decl(&mut self, rest: &str, raw: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        if self.current.is_some() || !self.knots.is_empty() {
            self.err(p, "VAR declarations must precede the first knot");
            return;
        }
        let Some((name, value)) = rest.split_once('=') else {
            self.err(p, "expected `VAR name = value`");
            return;
        };
        let name = name.trim();
        let value = value.trim();
        if !is_ident(name) {
            self.err(p, format!("invalid variable name `{name}`"));
            return;
        }
        if name.starts_with(PHYS_PREFIX) {
            self.err(p, format!("`{name}`: the `{PHYS_PREFIX}` prefix is reserved for the Director"));
            return;
        }
        if self.variables.iter().any(|v| v.name == name) {
            self.err(p, format!("duplicate variable `{name}`"));
            return;
        }
        let initial = match value {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            v => match v.parse::<f64>() {
                Ok(n) if n.is_finite() => Value::Number(n),
                _ => {
                    let c = col_of(raw, raw.rfind(v).unwrap_or(0));
                    self.err(pos(lineno, c), format!("invalid initial value `{v}`"));
                    return;
                }
            },
        };
        self.variables.push(VariableDecl {
            name: name.to_string(),
            initial,
        });
    }

    fn knot_header(&mut self, line: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        let name = line.trim_matches('=').trim();
        if !is_ident(name) || name == END {
            self.err(p, format!("invalid knot header `{line}`"));
            return;
        }
        self.close_knot();
        if self.source_map.knots.contains_key(name) {
            self.duplicate_knots.push((name.to_string(), p));
        } else {
            self.source_map.knots.insert(name.to_string(), p);
        }
        self.current = Some(KnotBuilder {
            name: name.to_string(),
            pos: p,
            ..Default::default()
        });
    }

    fn close_knot(&mut self) {
        let Some(mut kb) = self.current.take() else {
            return;
        };
        if !kb.current.items.is_empty() {
            let page = std::mem::take(&mut kb.current);
            kb.pages.push(page);
        } else if let Some(bp) = kb.page_break_pos {
            self.err(bp, "page break produces an empty page");
        }
        for (tag, _, _, p) in &kb.open_tags {
            self.err(*p, format!("unbalanced context tag `{tag}`: opened but never closed in knot `{}`", kb.name));
        }
        if kb.pages.is_empty() {
            self.err(kb.pos, format!("knot `{}` has no text", kb.name));
        }
        kb.spans.sort_by_key(|(order, _)| *order);
        self.knots.push(Knot {
            name: kb.name,
            pages: kb.pages,
            choices: kb.choices,
            auto: kb.auto,
            divert: kb.divert,
            tag_spans: kb.spans.into_iter().map(|(_, s)| s).collect(),
        });
    }

    fn tag_line(&mut self, line: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        let body = &line[2..];
        let (name, start) = if let Some(n) = body.strip_suffix("_START") {
            (n, true)
        } else if let Some(n) = body.strip_suffix("_STOP") {
            (n, false)
        } else {
            self.err(p, format!("expected `##NAME_START` or `##NAME_STOP`, found `{line}`"));
            return;
        };
        if !is_ident(name) {
            self.err(p, format!("invalid tag name `{name}`"));
            return;
        }
        let name = name.to_string();
        let Some(kb) = self.knot_mut(p, "context tag") else {
            return;
        };
        if kb.in_choices() {
            self.err(p, "context tags must precede choices and diverts");
            return;
        }
        if start {
            if kb.open_tags.iter().any(|(t, ..)| *t == name) {
                self.err(p, format!("context tag `{name}` is already open"));
                return;
            }
            let order = kb.opened;
            kb.opened += 1;
            kb.open_tags.push((name.clone(), None, order, p));
            if !self.tags.contains(&name) {
                self.tags.push(name.clone());
                self.source_map.tag_opens.insert(name, p);
            }
        } else {
            match kb.open_tags.last() {
                Some((t, ..)) if *t == name => {}
                Some((t, ..)) => {
                    let msg = format!("unbalanced context tag `{name}`: `{t}` must be closed first");
                    self.err(p, msg);
                    return;
                }
                None => {
                    self.err(p, format!("unbalanced context tag `{name}`: closed without being opened"));
                    return;
                }
            }
            let (tag, first, order, _) = kb.open_tags.pop().expect("checked above");
            match (first, kb.last_text_page) {
                (Some(s), Some(e)) if s <= e => kb.spans.push((
                    order,
                    TagSpan {
                        tag,
                        start_page: s,
                        end_page: e,
                    },
                )),
                _ => self.err(p, format!("context tag `{name}` encloses no text")),
            }
        }
    }

    fn page_break(&mut self, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        let mut empty = false;
        if let Some(kb) = self.knot_mut(p, "page break") {
            if kb.in_choices() {
                self.err(p, "page break after choices");
                return;
            }
            if kb.current.items.is_empty() {
                empty = true;
            } else {
                let page = std::mem::take(&mut kb.current);
                kb.pages.push(page);
                kb.page_break_pos = Some(p);
            }
        }
        if empty {
            self.err(p, "page break produces an empty page");
        }
    }

    fn divert_line(&mut self, target: &str, p: Pos, tp: Pos) {
        if !is_ident(target) {
            self.err(tp, format!("invalid divert target `{target}`"));
            return;
        }
        if self.current.is_none() {
            if self.knots.is_empty() && self.entry.is_none() {
                self.entry = Some((target.to_string(), tp));
                self.targets.push((target.to_string(), tp));
            } else {
                self.err(p, "divert outside of a knot");
            }
            return;
        }
        let kb = self.current.as_mut().expect("checked");
        if kb.divert.is_some() {
            self.err(p, "knot already has a divert");
            return;
        }
        if kb.auto.is_some() {
            self.err(p, "a knot with an automatic choice cannot also divert");
            return;
        }
        kb.divert = Some(target.to_string());
        self.targets.push((target.to_string(), tp));
    }

    /// Parse `-> a, b` at the end of a choice line; returns targets with positions.
    fn arrow_targets(&mut self, tail: &str, raw: &str, lineno: usize) -> Option<Vec<(String, Pos)>> {
        let Some(arrow) = tail.find("->") else {
            let c = col_of(raw, raw.len());
            self.err(pos(lineno, c), "expected `-> target`");
            return None;
        };
        let base = raw.len() - tail.len();
        let mut out = Vec::new();
        let mut off = base + arrow + 2;
        for part in tail[arrow + 2..].split(',') {
            let t = part.trim();
            let lead = part.len() - part.trim_start().len();
            let c = col_of(raw, off + lead);
            if !is_ident(t) {
                self.err(pos(lineno, c), format!("invalid divert target `{t}`"));
                return None;
            }
            out.push((t.to_string(), pos(lineno, c)));
            off += part.len() + 1;
        }
        Some(out)
    }

    fn choice_line(&mut self, line: &str, raw: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        if self.knot_mut(p, "choice").is_none() {
            return;
        }
        let kb = self.current.as_ref().expect("checked");
        if kb.auto.is_some() || kb.divert.is_some() {
            self.err(p, "manual choices must precede diverts and cannot be mixed with automatic choices");
            return;
        }
        let mut rest = line[1..].trim_start();
        let mut condition = None;
        if rest.starts_with('{') {
            let Some(close) = rest.find('}') else {
                self.err(p, "unterminated `{` in choice condition");
                return;
            };
            let src = &rest[1..close];
            let ec = col_of(raw, raw.len() - rest.len() + 1);
            match parse_expr(src) {
                Ok(e) => {
                    self.note_reads(&e, pos(lineno, ec));
                    self.conditions.push((e.clone(), pos(lineno, ec)));
                    condition = Some(e);
                }
                Err(e) => {
                    self.err(pos(lineno, ec + e.offset), format!("syntax error in condition: {}", e.message));
                    return;
                }
            }
            rest = rest[close + 1..].trim_start();
        }
        if !rest.starts_with('[') {
            self.err(p, "expected `[label]` in choice");
            return;
        }
        let Some(close) = rest.find(']') else {
            self.err(p, "unterminated `[` in choice label");
            return;
        };
        let label = rest[1..close].trim().to_string();
        if label.is_empty() {
            self.err(p, "manual choice needs a non-empty label (use `*auto` for automatic choices)");
            return;
        }
        let Some(targets) = self.arrow_targets(&rest[close + 1..], raw, lineno) else {
            return;
        };
        if targets.len() != 1 {
            self.err(p, "a manual choice has exactly one target");
            return;
        }
        let (target, tp) = targets.into_iter().next().expect("one target");
        self.targets.push((target.clone(), tp));
        let kb = self.current.as_mut().expect("checked");
        let key = (kb.name.clone(), kb.choices.len());
        kb.choices.push(Choice {
            label,
            target,
            condition,
        });
        self.source_map.choices.insert(key, p);
    }

    fn auto_line(&mut self, line: &str, raw: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        if self.knot_mut(p, "automatic choice").is_none() {
            return;
        }
        let kb = self.current.as_ref().expect("checked");
        if kb.auto.is_some() || kb.divert.is_some() || !kb.choices.is_empty() {
            self.err(p, "a knot has at most one automatic choice, which replaces manual choices and diverts");
            return;
        }
        let rest = line["*auto".len()..].trim_start();
        let (Some(0), Some(close)) = (rest.find('{'), rest.find('}')) else {
            self.err(p, "expected `*auto {rule} -> targets`");
            return;
        };
        let rule_src = rest[1..close].trim();
        let rc = col_of(raw, raw.len() - rest.len() + 1);
        let rule = match parse_auto_rule(rule_src) {
            Ok(r) => r,
            Err(msg) => {
                self.err(pos(lineno, rc), msg);
                return;
            }
        };
        for op in &rule.operands {
            self.reads.push((op.clone(), pos(lineno, rc)));
        }
        let Some(targets) = self.arrow_targets(&rest[close + 1..], raw, lineno) else {
            return;
        };
        let expected = match rule.mode {
            AutoMode::Threshold => 2,
            _ => rule.operands.len(),
        };
        if targets.len() != expected {
            self.err(
                p,
                format!("`{}` rule needs {expected} targets, found {}", rule.mode.keyword(), targets.len()),
            );
            return;
        }
        self.targets.extend(targets.iter().cloned());
        let kb = self.current.as_mut().expect("checked");
        self.source_map.choices.insert((kb.name.clone(), usize::MAX), p);
        kb.auto = Some(AutoChoice {
            rule,
            targets: targets.into_iter().map(|(t, _)| t).collect(),
        });
    }

    fn assign_line(&mut self, rest: &str, raw: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        let Some((name, value)) = rest.split_once('=') else {
            self.err(p, "expected `~ name = expression`");
            return;
        };
        let name = name.trim().to_string();
        if !is_ident(&name) {
            self.err(p, format!("invalid assignment target `{name}`"));
            return;
        }
        if name.starts_with(PHYS_PREFIX) {
            self.err(p, format!("cannot assign `{name}`: `{PHYS_PREFIX}` variables are written by the Director only"));
            return;
        }
        let ec = col_of(raw, raw.find('=').map(|i| i + 1).unwrap_or(0));
        let value = match parse_expr(value) {
            Ok(e) => e,
            Err(e) => {
                self.err(pos(lineno, ec + e.offset), format!("syntax error in expression: {}", e.message));
                return;
            }
        };
        self.reads.push((name.clone(), p));
        self.note_reads(&value, pos(lineno, ec));
        self.assigns.push((name.clone(), p, value.clone()));
        if let Some(kb) = self.knot_mut(p, "assignment") {
            if kb.in_choices() {
                self.err(p, "assignments must precede choices and diverts");
                return;
            }
            kb.push_item(PageItem::Assign { name, value });
        }
    }

    fn text_line(&mut self, line: &str, raw: &str, lineno: usize, c0: usize) {
        let p = pos(lineno, c0);
        let body = line.strip_prefix('\\').unwrap_or(line);
        let base = raw.len() - raw.trim_start().len() + (line.len() - body.len());
        let segments = match parse_segments(body) {
            Ok(s) => s,
            Err((off, msg)) => {
                self.err(pos(lineno, col_of(raw, base + off)), msg);
                return;
            }
        };
        for seg in &segments {
            if let Segment::Switch { cond, .. } = seg {
                self.note_reads(cond, p);
                self.conditions.push((cond.clone(), p));
            }
        }
        if let Some(kb) = self.knot_mut(p, "text") {
            if kb.in_choices() {
                self.err(p, "text after choices or divert");
                return;
            }
            kb.push_item(PageItem::Line(segments));
        }
    }

    fn note_reads(&mut self, e: &Expr, p: Pos) {
        for v in e.variables() {
            self.reads.push((v.to_string(), p));
        }
    }

    fn finish(self, id: String) -> (StoryGraph, Pending) {
        let entry_knot = self
            .entry
            .as_ref()
            .map(|(n, _)| n.clone())
            .or_else(|| self.knots.first().map(|k| k.name.clone()))
            .unwrap_or_default();
        let mut graph = StoryGraph {
            id,
            entry_knot,
            variables: self.variables,
            tags: self.tags,
            knots: self.knots,
            source_map: self.source_map,
        };
        graph.source_map.knots.entry(graph.entry_knot.clone()).or_default();
        let pending = Pending {
            targets: self.targets,
            reads: self.reads,
            assigns: self.assigns,
            conditions: self.conditions,
            duplicate_knots: self.duplicate_knots,
            entry_pos: self.entry.map(|(_, p)| p),
        };
        (graph, pending)
    }
}

/// Cross-reference information carried from the syntactic pass to validation.
struct Pending {
    targets: Vec<(String, Pos)>,
    reads: Vec<(String, Pos)>,
    assigns: Vec<(String, Pos, Expr)>,
    conditions: Vec<(Expr, Pos)>,
    duplicate_knots: Vec<(String, Pos)>,
    entry_pos: Option<Pos>,
}

fn validate(graph: &StoryGraph, pending: Pending) -> Vec<Diagnostic> {
    let mut errors = Vec::new();
    for (name, p) in &pending.duplicate_knots {
        errors.push(Diagnostic::error(*p, format!("duplicate knot name `{name}`")));
    }
    let knots: BTreeSet<&str> = graph.knots.iter().map(|k| k.name.as_str()).collect();
    if graph.knot(&graph.entry_knot).is_none() {
        let p = pending.entry_pos.unwrap_or(Pos { line: 1, col: 1 });
        errors.push(Diagnostic::error(p, format!("entry knot `{}` does not exist", graph.entry_knot)));
    }
    for (t, p) in &pending.targets {
        if t != END && !knots.contains(t.as_str()) && pending.entry_pos != Some(*p) {
            errors.push(Diagnostic::error(*p, format!("unknown divert target `{t}`")));
        }
    }
    let lookup = |name: &str| graph.declared_type(name);
    let mut reported = BTreeSet::new();
    for (name, p) in &pending.reads {
        if lookup(name).is_none() && reported.insert(name.clone()) {
            errors.push(Diagnostic::error(*p, format!("undeclared variable `{name}`")));
        }
    }
    if reported.is_empty() {
        for (cond, p) in &pending.conditions {
            match cond.type_of(&lookup) {
                Ok(Type::Bool) => {}
                Ok(t) => errors.push(Diagnostic::error(*p, format!("condition `{cond}` is {t}, expected boolean"))),
                Err(e) => errors.push(Diagnostic::error(*p, format!("type error in `{cond}`: {e}"))),
            }
        }
        for (name, p, value) in &pending.assigns {
            let want = lookup(name).expect("declared");
            match value.type_of(&lookup) {
                Ok(t) if t == want => {}
                Ok(t) => errors.push(Diagnostic::error(*p, format!("cannot assign {t} to {want} variable `{name}`"))),
                Err(e) => errors.push(Diagnostic::error(*p, format!("type error in `{value}`: {e}"))),
            }
        }
    }
    errors.sort_by_key(|d| (d.line, d.col));
    errors
}

fn parse_auto_rule(src: &str) -> Result<AutoRule, String> {
    let (mode_word, rest) = src.split_once(char::is_whitespace).unwrap_or((src, ""));
    let mode = match mode_word {
        "argmax" => AutoMode::Argmax,
        "argmin" => AutoMode::Argmin,
        "threshold" => AutoMode::Threshold,
        other => return Err(format!("unknown automatic rule `{other}` (expected argmax, argmin or threshold)")),
    };
    match mode {
        AutoMode::Argmax | AutoMode::Argmin => {
            let operands = rest
                .split(',')
                .map(|s| operand_name(s.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            if operands.len() < 2 {
                return Err(format!("`{}` needs at least 2 operands", mode.keyword()));
            }
            Ok(AutoRule {
                mode,
                operands,
                threshold: None,
            })
        }
        AutoMode::Threshold => {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [op, value] = parts.as_slice() else {
                return Err("`threshold` needs exactly 1 operand and a threshold value".into());
            };
            let threshold = value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("invalid threshold `{value}`"))?;
            Ok(AutoRule {
                mode,
                operands: vec![operand_name(op)?],
                threshold: Some(threshold),
            })
        }
    }
}

/// Resolve `phys.key@TAG` / `phys.key` sugar to its canonical variable name.
fn operand_name(s: &str) -> Result<String, String> {
    if let Some(rest) = s.strip_prefix("phys.") {
        let (key, tag) = match rest.split_once('@') {
            Some((k, t)) => (k, Some(t)),
            None => (rest, None),
        };
        if !is_ident(key) || tag.is_some_and(|t| !is_ident(t)) {
            return Err(format!("invalid physiological operand `{s}`"));
        }
        return Ok(phys_var(tag, key));
    }
    if is_ident(s) {
        Ok(s.to_string())
    } else {
        Err(format!("invalid operand `{s}`"))
    }
}

fn parse_segments(line: &str) -> Result<Vec<Segment>, (usize, String)> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut chars = line.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, n)) => text.push(n),
                None => text.push('\\'),
            },
            '{' => {
                let Some(close) = find_unescaped(line, i + 1, '}') else {
                    return Err((i, "unterminated `{` in text".into()));
                };
                let body = &line[i + 1..close];
                let Some(colon) = find_unescaped(body, 0, ':') else {
                    return Err((i, "expected `{condition: text | text}`".into()));
                };
                let cond = parse_expr(&body[..colon])
                    .map_err(|e| (i + 1 + e.offset, format!("syntax error in condition: {}", e.message)))?;
                let branches = &body[colon + 1..];
                let (then, otherwise) = match find_unescaped(branches, 0, '|') {
                    Some(bar) => (&branches[..bar], &branches[bar + 1..]),
                    None => (branches, ""),
                };
                if !text.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut text)));
                }
                out.push(Segment::Switch {
                    cond,
                    then: unescape(then.trim()),
                    otherwise: unescape(otherwise.trim()),
                });
                while chars.peek().is_some_and(|(j, _)| *j <= close) {
                    chars.next();
                }
            }
            '}' => return Err((i, "unmatched `}` in text".into())),
            _ => text.push(c),
        }
    }
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    Ok(out)
}

fn find_unescaped(s: &str, from: usize, target: char) -> Option<usize> {
    let mut escaped = false;
    for (i, c) in s[from..].char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == target {
            return Some(from + i);
        }
    }
    None
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
                continue;
            }
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprSyntaxError {
    /// Byte offset into the expression source.
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for ExprSyntaxError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "at offset {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ExprSyntaxError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ExprSyntaxError> {
    const OPS: [&str; 15] = [
        "<=", ">=", "==", "!=", "&&", "||", "<", ">", "+", "-", "*", "/", "%", "!", "=",
    ];
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let n = text.parse::<f64>().map_err(|_| ExprSyntaxError {
                offset: start,
                message: format!("invalid number `{text}`"),
            })?;
            out.push((start, Tok::Num(n)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || matches!(bytes[i], b'_' | b'.' | b'@'))
            {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if c == '(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else if let Some(op) = OPS.iter().find(|op| src[i..].starts_with(**op)) {
            if *op == "=" {
                return Err(ExprSyntaxError {
                    offset: i,
                    message: "`=` is not an operator (use `==`)".into(),
                });
            }
            out.push((i, Tok::Op(op)));
            i += op.len();
        } else {
            return Err(ExprSyntaxError {
                offset: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct ExprParser {
    toks: Vec<(usize, Tok)>,
    i: usize,
    end: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.i).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ExprSyntaxError> {
        Err(ExprSyntaxError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn binop(&self) -> Option<BinOp> {
        Some(match self.peek()? {
            Tok::Op("+") => BinOp::Add,
            Tok::Op("-") => BinOp::Sub,
            Tok::Op("*") => BinOp::Mul,
            Tok::Op("/") => BinOp::Div,
            Tok::Op("%") => BinOp::Rem,
            Tok::Op("<") => BinOp::Lt,
            Tok::Op("<=") => BinOp::Le,
            Tok::Op(">") => BinOp::Gt,
            Tok::Op(">=") => BinOp::Ge,
            Tok::Op("==") => BinOp::Eq,
            Tok::Op("!=") => BinOp::Ne,
            Tok::Op("&&") => BinOp::And,
            Tok::Op("||") => BinOp::Or,
            Tok::Ident(w) if w == "and" => BinOp::And,
            Tok::Ident(w) if w == "or" => BinOp::Or,
            _ => return None,
        })
    }

    fn expr(&mut self, min_prec: u8) -> Result<Expr, ExprSyntaxError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = binop_prec(op);
            if prec < min_prec {
                break;
            }
            self.i += 1;
            let rhs = self.expr(prec + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprSyntaxError> {
        match self.peek() {
            Some(Tok::Op("-")) => {
                self.i += 1;
                let inner = self.unary()?;
                Ok(match inner {
                    Expr::Number(n) => Expr::Number(-n),
                    e => Expr::Unary(UnOp::Neg, Box::new(e)),
                })
            }
            Some(Tok::Op("!")) => {
                self.i += 1;
                Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)))
            }
            Some(Tok::Ident(w)) if w == "not" => {
                self.i += 1;
                Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprSyntaxError> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of expression");
        };
        match tok {
            Tok::Num(n) => {
                self.i += 1;
                Ok(Expr::Number(n))
            }
            Tok::Ident(w) => {
                let e = match w.as_str() {
                    "true" => Expr::Bool(true),
                    "false" => Expr::Bool(false),
                    "and" | "or" | "not" => return self.fail(format!("unexpected `{w}`")),
                    _ => match operand_name(&w) {
                        Ok(name) => Expr::Var(name),
                        Err(msg) => return self.fail(msg),
                    },
                };
                self.i += 1;
                Ok(e)
            }
            Tok::LParen => {
                self.i += 1;
                let e = self.expr(0)?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.fail("expected `)`");
                }
                self.i += 1;
                Ok(e)
            }
            Tok::RParen => self.fail("unexpected `)`"),
            Tok::Op(op) => self.fail(format!("unexpected `{op}`")),
        }
    }
}

fn binop_prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne => 3,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
        BinOp::Add | BinOp::Sub => 5,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
    }
}

/// Parse a standalone expression.
pub fn parse_expr(src: &str) -> Result<Expr, ExprSyntaxError> {
    let toks = tokenize(src)?;
    let mut p = ExprParser {
        toks,
        i: 0,
        end: src.len(),
    };
    let e = p.expr(0)?;
    if p.i < p.toks.len() {
        return p.fail("unexpected trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_KNOTS: &str = "\
VAR courage = 5
== start ==
You stand at the crossroads.
* [Enter the dungeon] -> dungeon
* [Walk into the forest] -> forest

== dungeon ==
##DUNGEON_START
The air is cold.
---
Water drips somewhere.
##DUNGEON_STOP
-> forest

== forest ==
{phys_dungeon_arousal > 0.5: You are still shaking. | You feel calm.}
-> END
";

    #[test]
    fn three_knots_one_span() {
        let g = parse_str(THREE_KNOTS).unwrap();
        assert_eq!(g.knots.len(), 3);
        let spans: usize = g.knots.iter().map(|k| k.tag_spans.len()).sum();
        assert_eq!(spans, 1);
        let d = g.knot("dungeon").unwrap();
        assert_eq!(
            d.tag_spans[0],
            TagSpan {
                tag: "DUNGEON".into(),
                start_page: 0,
                end_page: 1
            }
        );
        assert_eq!(g.entry_knot, "start");
        assert_eq!(g.tags, vec!["DUNGEON".to_string()]);
    }

    #[test]
    fn empty_document() {
        let err = parse_str("").unwrap_err();
        assert_eq!(err.diagnostics.len(), 1);
        assert_eq!(err.diagnostics[0].message, "empty story");
        let err = parse_str("  \n// only a comment\n").unwrap_err();
        assert_eq!(err.diagnostics[0].message, "empty story");
    }

    #[test]
    fn unknown_divert_target_has_line() {
        let src = "== a ==\nHello.\n-> nowhere\n";
        let err = parse_str(src).unwrap_err();
        let d = &err.diagnostics[0];
        assert!(d.message.contains("nowhere"), "{}", d.message);
        assert_eq!((d.line, d.col), (3, 4));
        assert_eq!(err.to_string(), "<inline>:3:4: error: unknown divert target `nowhere`");
    }

    #[test]
    fn duplicate_knot() {
        let err = parse_str("== a ==\nx\n== a ==\ny\n").unwrap_err();
        assert_eq!(err.diagnostics[0].line, 3);
        assert!(err.diagnostics[0].message.contains("duplicate knot"));
    }

    #[test]
    fn unbalanced_tags() {
        let err = parse_str("== a ==\n##X_START\ntext\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("unbalanced"));
        assert_eq!(err.diagnostics[0].line, 2);
        let err = parse_str("== a ==\ntext\n##X_STOP\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("unbalanced"));
        let err = parse_str("== a ==\n##X_START\n##Y_START\ntext\n##X_STOP\n##Y_STOP\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("unbalanced"));
        assert_eq!(err.diagnostics[0].line, 5);
    }

    #[test]
    fn undeclared_variable() {
        let err = parse_str("== a ==\n{foo > 1: yes | no}\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("undeclared variable `foo`"));
        assert_eq!(err.diagnostics[0].line, 2);
    }

    #[test]
    fn director_prefix_is_read_only() {
        let err = parse_str("== a ==\n~ phys_valence = 1\ntext\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("Director"));
        let err = parse_str("VAR phys_x = 1\n== a ==\ntext\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("reserved"));
    }

    #[test]
    fn auto_rules() {
        let src = "\
== pet ==
A box on the doorstep.
*auto {argmax phys.valence@CAT, phys.valence@DOG} -> kitten, puppy
== kitten ==
A kitten.
== puppy ==
A puppy.
";
        let g = parse_str(src).unwrap();
        let auto = g.knot("pet").unwrap().auto.as_ref().unwrap();
        assert_eq!(auto.rule.mode, AutoMode::Argmax);
        assert_eq!(auto.rule.operands, vec!["phys_cat_valence", "phys_dog_valence"]);
        assert_eq!(auto.targets, vec!["kitten", "puppy"]);

        let bad = parse_str("== a ==\nx\n*auto {argmax phys_a} -> a\n").unwrap_err();
        assert!(bad.diagnostics[0].message.contains("at least 2"));
        let bad = parse_str("== a ==\nx\n*auto {threshold phys_a} -> a, a\n").unwrap_err();
        assert!(bad.diagnostics[0].message.contains("exactly 1 operand"));
        let ok = parse_str("== a ==\nx\n*auto {threshold phys_a 0.5} -> a, END\n").unwrap();
        assert_eq!(ok.knots[0].auto.as_ref().unwrap().rule.threshold, Some(0.5));
    }

    #[test]
    fn condition_must_be_boolean() {
        let err = parse_str("VAR x = 1\n== a ==\nt\n* {x + 1} [go] -> a\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("expected boolean"));
    }

    #[test]
    fn inline_switches() {
        let g = parse_str("VAR x = 1\n== a ==\nYou {x > 0: smile | frown} at \\{them\\}.\n").unwrap();
        let PageItem::Line(segs) = &g.knots[0].pages[0].items[0] else {
            panic!()
        };
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2], Segment::Text(" at {them}.".into()));
    }

    #[test]
    fn pages_and_spans_follow_text() {
        let src = "== a ==\none\n##T_START\n---\ntwo\n---\nthree\n##T_STOP\n---\nfour\n";
        let g = parse_str(src).unwrap();
        assert_eq!(g.knots[0].pages.len(), 4);
        let s = &g.knots[0].tag_spans[0];
        assert_eq!((s.start_page, s.end_page), (1, 2));
        let err = parse_str("== a ==\none\n---\n---\ntwo\n").unwrap_err();
        assert!(err.diagnostics[0].message.contains("empty page"));
    }

    #[test]
    fn expr_errors_have_offsets() {
        let e = parse_expr("1 + * 2").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(parse_expr("x = 1").is_err());
        assert!(parse_expr("(1 + 2").is_err());
        assert_eq!(parse_expr("phys.arousal@DUNGEON").unwrap(), Expr::var("phys_dungeon_arousal"));
    }
}
