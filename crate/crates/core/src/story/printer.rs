//! Canonical text form of a [`StoryGraph`]; reparsing the output yields an
//! equal graph.

use std::fmt::Write;

use super::ast::*;

pub fn print(graph: &StoryGraph) -> String {
    let mut out = String::new();
    for v in &graph.variables {
        let _ = writeln!(out, "VAR {} = {}", v.name, v.initial);
    }
    let entry_is_first = graph.knots.first().map(|k| k.name.as_str()) == Some(graph.entry_knot.as_str());
    if !entry_is_first {
        let _ = writeln!(out, "-> {}", graph.entry_knot);
    }
    for knot in &graph.knots {
        if !out.is_empty() {
            out.push('\n');
        }
        print_knot(knot, &mut out);
    }
    out
}

fn print_knot(knot: &Knot, out: &mut String) {
    let _ = writeln!(out, "== {} ==", knot.name);
    for (idx, page) in knot.pages.iter().enumerate() {
        if idx > 0 {
            out.push_str("---\n");
        }
        let opening: Vec<&TagSpan> = knot.tag_spans.iter().filter(|s| s.start_page == idx).collect();
        let closing: Vec<&TagSpan> = knot.tag_spans.iter().filter(|s| s.end_page == idx).collect();
        let first_line = page.items.iter().position(|i| matches!(i, PageItem::Line(_)));
        for (i, item) in page.items.iter().enumerate() {
            if Some(i) == first_line {
                for s in &opening {
                    let _ = writeln!(out, "##{}_START", s.tag);
                }
            }
            match item {
                PageItem::Line(segments) => {
                    out.push_str(&print_line(segments));
                    out.push('\n');
                }
                PageItem::Assign { name, value } => {
                    let _ = writeln!(out, "~ {name} = {value}");
                }
            }
        }
        for s in closing.iter().rev() {
            let _ = writeln!(out, "##{}_STOP", s.tag);
        }
    }
    for c in &knot.choices {
        out.push('*');
        if let Some(cond) = &c.condition {
            let _ = write!(out, " {{{cond}}}");
        }
        let _ = writeln!(out, " [{}] -> {}", c.label, c.target);
    }
    if let Some(auto) = &knot.auto {
        let rule = &auto.rule;
        let body = match rule.mode {
            AutoMode::Threshold => format!(
                "threshold {} {}",
                rule.operands[0],
                rule.threshold.unwrap_or_default()
            ),
            mode => format!("{} {}", mode.keyword(), rule.operands.join(", ")),
        };
        let _ = writeln!(out, "*auto {{{body}}} -> {}", auto.targets.join(", "));
    }
    if let Some(d) = &knot.divert {
        let _ = writeln!(out, "-> {d}");
    }
}

const LINE_PREFIXES: [&str; 9] = ["*", "~", "==", "##", "---", "->", "VAR ", "//", "\\"];

fn print_line(segments: &[Segment]) -> String {
    let mut line = String::new();
    for seg in segments {
        match seg {
            Segment::Text(t) => line.push_str(&escape(t, "{}\\")),
            Segment::Switch {
                cond,
                then,
                otherwise,
            } => {
                let _ = write!(line, "{{{cond}: {}", escape(then, "{}|:\\"));
                if !otherwise.is_empty() {
                    let _ = write!(line, " | {}", escape(otherwise, "{}|:\\"));
                }
                line.push('}');
            }
        }
    }
    if LINE_PREFIXES.iter().any(|p| line.starts_with(p)) {
        line.insert(0, '\\');
    }
    line
}

fn escape(s: &str, special: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if special.contains(c) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::parser::parse_str;

    #[test]
    fn round_trip_fixed_story() {
        let src = "\
VAR courage = 5
VAR lit = false
-> hall
== intro ==
\\*not a choice, just emphasis*
-> hall
== hall ==
##HALL_START
You {courage >= 3 && !lit: grin | shiver: a lot} in the \\{dark\\}.
~ courage = courage - 1
---
##ECHO_START
Echoes.
##ECHO_STOP
##HALL_STOP
* {courage > 0} [Go on] -> pets
* [Leave] -> END
== pets ==
Two animals.
*auto {argmin phys.valence@CAT, phys_dog_valence, phys_valence} -> hall, intro, END
";
        let g = parse_str(src).unwrap();
        let printed = print(&g);
        let again = parse_str(&printed).unwrap();
        assert_eq!(g, again, "{printed}");
        assert_eq!(print(&again), printed);
    }
}
