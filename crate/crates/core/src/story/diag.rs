use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use super::ast::Pos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(severity: Severity, pos: Pos, message: impl Into<String>) -> Self {
        Self {
            severity,
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }

    pub fn error(pos: Pos, message: impl Into<String>) -> Self {
        Self::new(Severity::Error, pos, message)
    }

    pub fn warning(pos: Pos, message: impl Into<String>) -> Self {
        Self::new(Severity::Warning, pos, message)
    }

    pub fn info(pos: Pos, message: impl Into<String>) -> Self {
        Self::new(Severity::Info, pos, message)
    }

    /// `path:line:col: severity: message`
    pub fn render(&self, path: &str) -> String {
        format!(
            "{}:{}:{}: {}: {}",
            path, self.line, self.col, self.severity, self.message
        )
    }
}

/// Where a story came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File(PathBuf),
    Inline,
}

impl Origin {
    pub fn display_path(&self) -> String {
        match self {
            Origin::File(p) => p.display().to_string(),
            Origin::Inline => "<inline>".to_string(),
        }
    }

    /// Story id used on the marker stream: the file stem, or `inline`.
    pub fn story_id(&self) -> String {
        match self {
            Origin::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "story".into()),
            Origin::Inline => "inline".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorySource {
    pub text: String,
    pub origin: Origin,
}

impl StorySource {
    pub fn inline(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            origin: Origin::Inline,
        }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let text = std::fs::read_to_string(&path)?;
        Ok(Self {
            text,
            origin: Origin::File(path),
        })
    }
}

/// Parse failure: at least one error diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseErrors {
    pub origin: Origin,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = self.origin.display_path();
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            f.write_str(&d.render(&path))?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseErrors {}
