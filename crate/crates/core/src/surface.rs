//! API surface of the subject library.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const REFERENCE_SURFACE: &str = include_str!("../assets/reference_surface.txt");

/// Python keywords; none of them may be used as an identifier segment.
pub const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SurfaceError {
    #[error("invalid identifier segment {0:?}")]
    BadSegment(String),
    #[error("empty qualified name")]
    Empty,
    #[error("duplicate qualified names: {0:?}")]
    Duplicate(Vec<String>),
    #[error("function {function} lives in undeclared namespace {namespace:?}")]
    UndeclaredNamespace { function: String, namespace: String },
    #[error("namespace {0:?} has an undeclared parent namespace")]
    OrphanNamespace(String),
    #[error("invalid package name {0:?}")]
    BadPackage(String),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_ascii_alphanumeric()) && !PYTHON_KEYWORDS.contains(&s)
}

/// A function name qualified by its namespace path inside the package
/// (the package root itself is not part of the path). Serialized as the
/// dotted form, e.g. `"linalg.cross"` or `"mean"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QualifiedName {
    pub namespace: Vec<String>,
    pub leaf: String,
}

impl QualifiedName {
    pub fn new<S: Into<String>>(namespace: Vec<String>, leaf: S) -> Self {
        Self {
            namespace,
            leaf: leaf.into(),
        }
    }

    pub fn main<S: Into<String>>(leaf: S) -> Self {
        Self::new(Vec::new(), leaf)
    }

    pub fn namespace_dotted(&self) -> String {
        self.namespace.join(".")
    }

    pub fn dotted(&self) -> String {
        self.to_string()
    }

    /// Dotted form under a package root, e.g. `zwc.rfx.gosubab`.
    pub fn under(&self, package: &str) -> String {
        if package.is_empty() {
            self.dotted()
        } else {
            format!("{package}.{self}")
        }
    }

    pub fn validate(&self) -> Result<(), SurfaceError> {
        for seg in self.namespace.iter().chain(std::iter::once(&self.leaf)) {
            if !is_identifier(seg) {
                return Err(SurfaceError::BadSegment(seg.clone()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for seg in &self.namespace {
            write!(f, "{seg}.")?;
        }
        f.write_str(&self.leaf)
    }
}

impl FromStr for QualifiedName {
    type Err = SurfaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(SurfaceError::Empty);
        }
        let mut parts: Vec<String> = s.split('.').map(str::to_string).collect();
        let leaf = parts.pop().ok_or(SurfaceError::Empty)?;
        let q = QualifiedName::new(parts, leaf);
        q.validate()?;
        Ok(q)
    }
}

impl Ord for QualifiedName {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dotted().cmp(&other.dotted())
    }
}

impl PartialOrd for QualifiedName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for QualifiedName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.dotted())
    }
}

impl<'de> Deserialize<'de> for QualifiedName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Functions exposed by the subject library, grouped into namespaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSurface {
    pub package_name: String,
    pub functions: Vec<QualifiedName>,
    /// Non-root namespace paths; the root namespace is implicit.
    #[serde(default)]
    pub namespaces: Vec<Vec<String>>,
    /// Conventional import aliases of the package (`np` for NumPy).
    #[serde(default)]
    pub import_aliases: Vec<String>,
}

impl ApiSurface {
    pub fn new(package_name: impl Into<String>) -> Self {
        Self {
            package_name: package_name.into(),
            functions: Vec::new(),
            namespaces: Vec::new(),
            import_aliases: Vec::new(),
        }
    }

    /// The 267-function NumPy surface listed in the benchmark's function
    /// tables (main namespace plus `linalg`).
    pub fn reference() -> Self {
        Self::parse_listing(REFERENCE_SURFACE).expect("bundled reference surface is valid")
    }

    /// Parses a plain listing: one dotted name per line, `#` comments, a
    /// `# package: <name>` header and optional `# alias: <name>` lines.
    pub fn parse_listing(text: &str) -> Result<Self, SurfaceError> {
        let mut package = String::new();
        let mut aliases = Vec::new();
        let mut functions = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(p) = rest.strip_prefix("package:") {
                    package = p.trim().to_string();
                } else if let Some(a) = rest.strip_prefix("alias:") {
                    aliases.push(a.trim().to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            functions.push(line.parse::<QualifiedName>()?);
        }
        let mut surface = ApiSurface::new(package);
        surface.functions = functions;
        surface.import_aliases = aliases;
        surface.namespaces = surface.implied_namespaces();
        surface.validate()?;
        Ok(surface)
    }

    /// Every namespace prefix implied by the functions.
    pub fn implied_namespaces(&self) -> Vec<Vec<String>> {
        let mut set = BTreeSet::new();
        for f in &self.functions {
            for i in 1..=f.namespace.len() {
                set.insert(f.namespace[..i].to_vec());
            }
        }
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<(), SurfaceError> {
        if !is_identifier(&self.package_name) {
            return Err(SurfaceError::BadPackage(self.package_name.clone()));
        }
        let mut seen = BTreeSet::new();
        let mut dups = BTreeSet::new();
        for f in &self.functions {
            f.validate()?;
            if !seen.insert(f.dotted()) {
                dups.insert(f.dotted());
            }
        }
        if !dups.is_empty() {
            return Err(SurfaceError::Duplicate(dups.into_iter().collect()));
        }
        let declared: BTreeSet<&Vec<String>> = self.namespaces.iter().collect();
        if declared.len() != self.namespaces.len() {
            let names = self.namespaces.iter().map(|n| n.join(".")).collect();
            return Err(SurfaceError::Duplicate(names));
        }
        for ns in &self.namespaces {
            for seg in ns {
                if !is_identifier(seg) {
                    return Err(SurfaceError::BadSegment(seg.clone()));
                }
            }
            if ns.is_empty() {
                return Err(SurfaceError::Empty);
            }
            if ns.len() > 1 && !declared.contains(&ns[..ns.len() - 1].to_vec()) {
                return Err(SurfaceError::OrphanNamespace(ns.join(".")));
            }
        }
        for f in &self.functions {
            if !f.namespace.is_empty() && !declared.contains(&f.namespace) {
                return Err(SurfaceError::UndeclaredNamespace {
                    function: f.dotted(),
                    namespace: f.namespace_dotted(),
                });
            }
        }
        Ok(())
    }

    /// True for the package name or one of its import aliases.
    pub fn is_package_token(&self, token: &str) -> bool {
        token == self.package_name || self.import_aliases.iter().any(|a| a == token)
    }

    pub fn contains(&self, name: &QualifiedName) -> bool {
        self.functions.contains(name)
    }

    /// Distinct function leaves across all namespaces.
    pub fn leaves(&self) -> BTreeSet<String> {
        self.functions.iter().map(|f| f.leaf.clone()).collect()
    }

    /// Resolves a loose reference (`"cross"`, `"linalg.svd"`,
    /// `"numpy.linalg.svd"`, `"np.mean"`) to a surface function. Bare
    /// leaves prefer the root namespace.
    pub fn resolve(&self, reference: &str) -> Option<QualifiedName> {
        let mut segs: Vec<&str> = reference.trim().split('.').collect();
        if segs.len() > 1 && self.is_package_token(segs[0]) {
            segs.remove(0);
        }
        let joined = segs.join(".");
        if let Some(f) = self.functions.iter().find(|f| f.dotted() == joined) {
            return Some(f.clone());
        }
        if segs.len() == 1 {
            let mut candidates: Vec<&QualifiedName> =
                self.functions.iter().filter(|f| f.leaf == segs[0]).collect();
            candidates.sort_by_key(|f| f.namespace.len());
            return candidates.first().map(|f| (*f).clone());
        }
        None
    }
}
