//! The story markup: parsing, linting, printing and execution of `.pif` stories.

pub mod ast;
pub mod diag;
pub mod expr;
pub mod lint;
pub mod parser;
pub mod printer;
pub mod runtime;

pub use ast::{AutoChoice, AutoMode, AutoRule, Choice, Knot, Page, PageItem, Segment, StoryGraph, TagSpan, END};
pub use diag::{Diagnostic, Origin, ParseErrors, Severity, StorySource};
pub use expr::{eval, phys_var, EvalError, Expr, Value, VariableStore, PHYS_PREFIX};
pub use lint::lint;
pub use parser::{parse, parse_expr, parse_str};
pub use printer::print;
pub use runtime::{advance, advance_with, render_page, start, AdvanceError, EngineEvent, ReaderEvent, EventHook, RenderedPage, StoryState};
