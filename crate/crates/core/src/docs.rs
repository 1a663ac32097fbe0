//! Documentation for the obfuscated package.
//!
//! Substitution works on dotted identifier chains (`np.linalg.svd`,
//! `a.mean`, `cross`). A token is a maximal run of identifier characters that
//! does not start with a digit, so `meaning` never matches `mean`. Leaf and
//! namespace tokens are matched case-sensitively; the package name is
//! matched case-insensitively (`NumPy`).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatEndpoint, ChatMessage, TransportError};
use crate::naming::ObfuscationMap;
use crate::python::extract_fenced_block;
use crate::surface::QualifiedName;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("documented names missing from the map: {}", .0.join(", "))]
    Coverage(Vec<String>),
    #[error("unparsable documented name {0:?}")]
    BadName(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One original docstring, keyed by the function's dotted name within the
/// source package (`mean`, `linalg.svd`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalDoc {
    pub name: String,
    #[serde(default)]
    pub signature: String,
    pub doc: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Substitution,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocEntry {
    /// Obfuscated dotted name below the package (`rfx.gosubab`).
    pub name: String,
    pub signature: String,
    pub doc: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocBundle {
    pub entries: Vec<DocEntry>,
}

impl DocBundle {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DocEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, DocError> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|source| DocError::Json { line: i + 1, source })?;
            entries.push(e);
        }
        Ok(Self { entries })
    }
}

pub fn read_original_docs<R: BufRead>(input: R) -> Result<Vec<OriginalDoc>, DocError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DocError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

fn is_ident_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

/// Identifier tokens of `text` under the substitution tokenization.
pub fn tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some((start, c)) = iter.next() {
        if !is_ident_char(c) {
            continue;
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, c2)) = iter.peek() {
            if !is_ident_char(c2) {
                break;
            }
            end = i + c2.len_utf8();
            iter.next();
        }
        if is_ident_start(c) {
            out.push(&text[start..end]);
        }
    }
    out
}

/// Identifier rewriting driven by an obfuscation map.
#[derive(Debug, Clone)]
pub struct Substituter {
    alias: String,
    package_lower: String,
    import_aliases: BTreeSet<String>,
    /// Original dotted function name to obfuscated dotted name.
    functions: BTreeMap<String, String>,
    /// Original dotted namespace to obfuscated dotted namespace.
    namespaces: BTreeMap<String, String>,
    /// Bare leaf to obfuscated leaf, preferring the shallowest namespace.
    leaves: BTreeMap<String, String>,
    /// Original namespace segment to obfuscated segment.
    segments: BTreeMap<String, String>,
}

impl Substituter {
    pub fn new(map: &ObfuscationMap) -> Self {
        let functions = map
            .name_map
            .iter()
            .map(|(k, v)| (k.dotted(), v.dotted()))
            .collect();
        let mut by_depth: Vec<(&QualifiedName, &QualifiedName)> = map.name_map.iter().collect();
        by_depth.sort_by(|a, b| a.0.namespace.len().cmp(&b.0.namespace.len()).then(a.0.cmp(b.0)));
        let mut leaves = BTreeMap::new();
        for (o, n) in by_depth {
            leaves.entry(o.leaf.clone()).or_insert_with(|| n.leaf.clone());
        }
        let mut segments = BTreeMap::new();
        for (o, n) in &map.namespace_map {
            let (Some(os), Some(ns)) = (o.rsplit('.').next(), n.rsplit('.').next()) else {
                continue;
            };
            segments.entry(os.to_string()).or_insert_with(|| ns.to_string());
        }
        Self {
            alias: map.package_alias.clone(),
            package_lower: map.source_package.to_lowercase(),
            import_aliases: BTreeSet::new(),
            functions,
            namespaces: map.namespace_map.clone(),
            leaves,
            segments,
        }
    }

    /// Additional spellings of the source package (`np`).
    pub fn with_import_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.import_aliases.extend(aliases.into_iter().map(Into::into));
        self
    }

    pub fn alias(&self) -> &str {
        &self.alias
    }

    fn is_package(&self, tok: &str) -> bool {
        tok.to_lowercase() == self.package_lower || self.import_aliases.contains(tok)
    }

    fn is_original(&self, tok: &str) -> bool {
        self.leaves.contains_key(tok) || self.segments.contains_key(tok)
    }

    fn segment(&self, tok: &str, own: Option<(&str, &str)>) -> String {
        if self.is_package(tok) {
            return self.alias.clone();
        }
        if let Some((leaf, obf)) = own {
            if tok == leaf {
                return obf.to_string();
            }
        }
        if let Some(l) = self.leaves.get(tok) {
            return l.clone();
        }
        if let Some(s) = self.segments.get(tok) {
            return s.clone();
        }
        tok.to_string()
    }

    fn rewrite_chain(&self, segs: &[&str], own: Option<(&str, &str)>) -> String {
        if !self.is_package(segs[0]) {
            let out: Vec<String> = segs.iter().map(|s| self.segment(s, own)).collect();
            return out.join(".");
        }
        let rest = &segs[1..];
        if rest.is_empty() {
            return self.alias.clone();
        }
        for cut in (1..=rest.len()).rev() {
            let head = rest[..cut].join(".");
            let replaced = self
                .functions
                .get(&head)
                .or_else(|| self.namespaces.get(&head));
            if let Some(obf) = replaced {
                let mut out = format!("{}.{}", self.alias, obf);
                for s in &rest[cut..] {
                    out.push('.');
                    out.push_str(&self.segment(s, own));
                }
                return out;
            }
        }
        // Unmapped qualified reference: drop it if it names anything
        // original, else keep it without the package qualifier.
        if rest.iter().any(|s| self.is_original(s) || self.is_package(s)) {
            String::new()
        } else {
            rest.join(".")
        }
    }

    /// Rewrites every identifier chain in `text`. `own` is the entry's
    /// original qualified name, whose bare leaf takes precedence.
    pub fn substitute_text(&self, text: &str, own: Option<&QualifiedName>) -> String {
        let own_pair = own.and_then(|q| {
            self.functions.get(&q.dotted()).map(|obf| {
                let leaf = obf.rsplit('.').next().unwrap_or(obf);
                (q.leaf.as_str(), leaf)
            })
        });
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        let run_end = |mut j: usize| {
            while j < chars.len() && is_ident_char(chars[j].1) {
                j += 1;
            }
            j
        };
        let byte = |j: usize| chars.get(j).map(|c| c.0).unwrap_or(text.len());
        while i < chars.len() {
            let c = chars[i].1;
            if !is_ident_char(c) {
                out.push(c);
                i += 1;
                continue;
            }
            let end = run_end(i);
            if !is_ident_start(c) {
                out.push_str(&text[byte(i)..byte(end)]);
                i = end;
                continue;
            }
            let mut segs = vec![&text[byte(i)..byte(end)]];
            let mut j = end;
            while j + 1 < chars.len() && chars[j].1 == '.' && is_ident_start(chars[j + 1].1) {
                let e = run_end(j + 1);
                segs.push(&text[byte(j + 1)..byte(e)]);
                j = e;
            }
            out.push_str(&self.rewrite_chain(&segs, own_pair));
            i = j;
        }
        out
    }

    /// Original names occurring in `text` as tokens.
    pub fn find_leaks(&self, text: &str) -> Vec<String> {
        let mut out: Vec<String> = tokens(text)
            .into_iter()
            .filter(|t| self.is_original(t) || self.is_package(t))
            .map(str::to_string)
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Deterministic documentation bundle: one entry per documented function,
/// ordered by obfuscated name.
pub fn substitute_docs(
    originals: &[OriginalDoc],
    map: &ObfuscationMap,
    sub: &Substituter,
) -> Result<DocBundle, DocError> {
    let mut missing = Vec::new();
    let mut entries = Vec::with_capacity(originals.len());
    for od in originals {
        let q: QualifiedName = od.name.parse().map_err(|_| DocError::BadName(od.name.clone()))?;
        let Some(obf) = map.get(&q) else {
            missing.push(od.name.clone());
            continue;
        };
        entries.push(DocEntry {
            name: obf.dotted(),
            signature: sub.substitute_text(&od.signature, Some(&q)),
            doc: sub.substitute_text(&od.doc, Some(&q)),
            provenance: Provenance::Substitution,
        });
    }
    if !missing.is_empty() {
        return Err(DocError::Coverage(missing));
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(DocBundle { entries })
}

#[derive(Debug, Clone)]
pub struct RewriteOptions {
    /// Model calls per entry beyond the first before falling back.
    pub max_retries: usize,
    pub max_in_flight: usize,
}

impl Default for RewriteOptions {
    fn default() -> Self {
        Self {
            max_retries: 2,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub bundle: DocBundle,
    /// Entries that kept their substitution text after failed validation.
    pub fallbacks: Vec<String>,
}

const REWRITE_SYSTEM: &str = "You translate API documentation into the context of a renamed \
Python package. Use only the new names given in the mapping. Never mention the original package \
or any original function name. Reply with the translated documentation in a single fenced text block.";

fn rewrite_prompt(map: &ObfuscationMap, od: &OriginalDoc) -> String {
    let mut s = format!(
        "Package mapping: {} -> {}\nFunction mapping:\n",
        map.source_package, map.package_alias
    );
    for (o, n) in &map.name_map {
        s.push_str(&format!(
            "{} -> {}\n",
            o.under(&map.source_package),
            n.under(&map.package_alias)
        ));
    }
    s.push_str(&format!(
        "\nOriginal documentation for {}:\n\n{}\n\n{}\n",
        od.name, od.signature, od.doc
    ));
    s
}

/// Rewrites each entry with the model given the original doc and the
/// global mapping. Outputs that leak an original name are retried, then
/// replaced by the substitution text. Without a client the bundle passes
/// through unchanged.
pub fn llm_rewrite_docs(
    bundle: &DocBundle,
    originals: &[OriginalDoc],
    map: &ObfuscationMap,
    sub: &Substituter,
    client: Option<&dyn ChatEndpoint>,
    opts: &RewriteOptions,
) -> Result<RewriteOutcome, DocError> {
    let Some(client) = client else {
        return Ok(RewriteOutcome {
            bundle: bundle.clone(),
            fallbacks: Vec::new(),
        });
    };
    let by_obf: BTreeMap<String, &OriginalDoc> = originals
        .iter()
        .filter_map(|od| {
            let q: QualifiedName = od.name.parse().ok()?;
            map.get(&q).map(|o| (o.dotted(), od))
        })
        .collect();
    let rewrite_one = |entry: &DocEntry| -> Result<(DocEntry, bool), DocError> {
        let Some(od) = by_obf.get(&entry.name) else {
            return Ok((entry.clone(), true));
        };
        let messages = [
            ChatMessage::system(REWRITE_SYSTEM),
            ChatMessage::user(rewrite_prompt(map, od)),
        ];
        for attempt in 0..=opts.max_retries {
            let reply = client.complete(&messages)?;
            let text = extract_fenced_block(&reply, &["text", "rst", "md", "markdown"])
                .unwrap_or_else(|| reply.trim().to_string());
            let leaks = sub.find_leaks(&text);
            if leaks.is_empty() && !text.trim().is_empty() {
                let mut out = entry.clone();
                out.doc = text;
                out.provenance = Provenance::Llm;
                return Ok((out, false));
            }
            tracing::debug!(entry = %entry.name, attempt, ?leaks, "rewrite rejected");
        }
        tracing::warn!(entry = %entry.name, "rewrite kept substitution text");
        Ok((entry.clone(), true))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<(DocEntry, bool), DocError>> =
        pool.install(|| bundle.entries.par_iter().map(rewrite_one).collect());
    let mut entries = Vec::with_capacity(results.len());
    let mut fallbacks = Vec::new();
    for r in results {
        let (e, fell_back) = r?;
        if fell_back {
            fallbacks.push(e.name.clone());
        }
        entries.push(e);
    }
    Ok(RewriteOutcome {
        bundle: DocBundle { entries },
        fallbacks,
    })
}
