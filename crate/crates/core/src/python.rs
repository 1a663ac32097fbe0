//! Thin layer over the Python parser: parsing, source spans, and a few
//! helpers for fenced code blocks and Python-literal rendering.

use rustpython_parser::text_size::{TextRange, TextSize};
use rustpython_parser::{ast, Parse};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use rustpython_parser::ast::Ranged;

/// 1-based line, 0-based column (in characters), like Python's `ast`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
    pub end_line: usize,
    pub end_col: usize,
}

#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
    source: String,
}

impl LineIndex {
    pub fn new(source: &str) -> Self {
        let mut starts = vec![0];
        for (i, b) in source.bytes().enumerate() {
            if b == b'\n' {
                starts.push(i + 1);
            }
        }
        Self {
            starts,
            source: source.to_string(),
        }
    }

    pub fn locate(&self, offset: TextSize) -> (usize, usize) {
        let off = usize::from(offset).min(self.source.len());
        let line = match self.starts.binary_search(&off) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let start = self.starts[line];
        let col = self
            .source
            .get(start..off)
            .map(|s| s.chars().count())
            .unwrap_or(off - start);
        (line + 1, col)
    }

    pub fn span(&self, range: TextRange) -> Span {
        let (line, col) = self.locate(range.start());
        let (end_line, end_col) = self.locate(range.end());
        Span {
            line,
            col,
            end_line,
            end_col,
        }
    }

    pub fn slice(&self, range: TextRange) -> &str {
        self.source
            .get(usize::from(range.start())..usize::from(range.end()))
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("syntax error at {line}:{col}: {message}")]
pub struct SyntaxError {
    pub message: String,
    pub line: usize,
    pub col: usize,
}

pub struct ParsedModule {
    pub body: Vec<ast::Stmt>,
    pub index: LineIndex,
}

pub fn parse_module(source: &str, name: &str) -> Result<ParsedModule, SyntaxError> {
    let index = LineIndex::new(source);
    match ast::Suite::parse(source, name) {
        Ok(body) => Ok(ParsedModule { body, index }),
        Err(err) => {
            let (line, col) = index.locate(err.offset);
            Err(SyntaxError {
                message: err.error.to_string(),
                line,
                col,
            })
        }
    }
}

/// Contents of the last fenced block tagged with one of `langs` (or of the
/// last untagged block when no tagged one exists).
pub fn extract_fenced_block(text: &str, langs: &[&str]) -> Option<String> {
    let mut tagged = None;
    let mut untagged = None;
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        let Some(info) = trimmed.strip_prefix("```") else {
            continue;
        };
        let lang = info.trim().to_ascii_lowercase();
        let mut body = Vec::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with("```") {
                closed = true;
                break;
            }
            body.push(inner);
        }
        if !closed {
            break;
        }
        let mut content = body.join("\n");
        content.push('\n');
        if lang.is_empty() {
            untagged = Some(content);
        } else if langs.iter().any(|l| *l == lang) {
            tagged = Some(content);
        }
    }
    tagged.or(untagged)
}

/// Renders a JSON value as a Python literal (`True`, `None`, lists, dicts).
pub fn py_literal(value: &Value) -> String {
    match value {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => py_str(s),
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(py_literal).collect();
            format!("[{}]", inner.join(", "))
        }
        Value::Object(map) => {
            let inner: Vec<String> = map
                .iter()
                .map(|(k, v)| format!("{}: {}", py_str(k), py_literal(v)))
                .collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}

/// Single-quoted Python string literal.
pub fn py_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\x{:02x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}
