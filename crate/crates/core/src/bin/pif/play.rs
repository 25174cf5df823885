//! Headless reading: pages to stdout, commands from stdin or a script.

use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use pif::story::{advance, render_page, start, AdvanceError, EngineEvent, ReaderEvent, StoryGraph, StoryState, PHYS_PREFIX};

use crate::{Failure, Format};

enum Command {
    Next,
    Choose(usize),
    Set(String, f64),
    Quit,
}

fn parse_set(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let name = name.trim();
    if !name.starts_with(PHYS_PREFIX) {
        return Err(format!("`{name}`: only `{PHYS_PREFIX}*` variables can be set"));
    }
    let v: f64 = value
        .trim()
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite())
        .ok_or_else(|| format!("`{}` is not a number", value.trim()))?;
    Ok((name.to_string(), v))
}

fn parse_command(line: &str) -> Result<Command, String> {
    let line = line.trim();
    match line {
        "" | "n" | "next" => Ok(Command::Next),
        "q" | "quit" => Ok(Command::Quit),
        _ => {
            if let Some(rest) = line.strip_prefix("set ") {
                let (n, v) = parse_set(rest)?;
                return Ok(Command::Set(n, v));
            }
            match line.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Command::Choose(k - 1)),
                _ => Err(format!("unknown command `{line}`")),
            }
        }
    }
}

fn show(out: &mut impl Write, graph: &StoryGraph, state: &StoryState, events: &[EngineEvent], format: Format) -> io::Result<()> {
    let page = render_page(graph, state);
    match format {
        Format::Json => {
            let v = serde_json::json!({"page": page, "events": events});
            writeln!(out, "{v}")?;
        }
        Format::Text => {
            for e in events {
                if let EngineEvent::TieBroken { candidates, chosen } = e {
                    writeln!(out, "(tie between {}: took {chosen})", candidates.join(", "))?;
                }
            }
            if page.finished {
                writeln!(out, "THE END")?;
                return out.flush();
            }
            writeln!(out, "[{} · page {}]", page.knot, page.page_index + 1)?;
            if !page.text.is_empty() {
                writeln!(out, "{}", page.text)?;
            }
            for (i, c) in page.choices.iter().enumerate() {
                writeln!(out, "  {}) {c}", i + 1)?;
            }
        }
    }
    out.flush()
}

pub fn run(path: &Path, script: Option<&Path>, set: &[String], format: Format) -> Result<(), Failure> {
    let (graph, _) = pif::session::load_story(path)?;
    let (mut state, events) = start(&graph);
    for s in set {
        let (n, v) = parse_set(s).map_err(Failure::invalid)?;
        state.set_phys(&n, v);
    }
    let input: Box<dyn BufRead> = match script {
        Some(p) => Box::new(BufReader::new(
            std::fs::File::open(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdin().lock()),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    show(&mut out, &graph, &state, &events, format).map_err(Failure::runtime)?;
    for line in input.lines() {
        if state.finished {
            break;
        }
        let line = line.map_err(Failure::runtime)?;
        let event = match parse_command(&line) {
            Ok(Command::Quit) => break,
            Ok(Command::Set(n, v)) => {
                state.set_phys(&n, v);
                continue;
            }
            Ok(Command::Next) => ReaderEvent::NextPage,
            Ok(Command::Choose(i)) => ReaderEvent::Choose(i),
            Err(msg) => {
                eprintln!("{msg}");
                continue;
            }
        };
        match advance(&graph, &state, event) {
            Ok((next, events)) => {
                state = next;
                show(&mut out, &graph, &state, &events, format).map_err(Failure::runtime)?;
            }
            // an automatic choice without its inputs cannot be recovered by the reader
            Err(e @ AdvanceError::Auto { .. }) => return Err(Failure::runtime(e)),
            Err(e) => eprintln!("{e}"),
        }
    }
    Ok(())
}
