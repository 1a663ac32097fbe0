//! Static analysis of a candidate solution: forbidden imports and whether
//! the stub's return value flows from the obfuscated package.

mod imports;
mod reliance;
mod walk;

use std::collections::{BTreeMap, BTreeSet};

use rustpython_parser::ast::Stmt;
use serde::{Deserialize, Serialize};

use crate::codegen::DEFAULT_OPAQUE_TYPE;
use crate::naming::ObfuscationMap;
use crate::python::{parse_module, Span};

pub use imports::{ForbiddenImport, ImportKind};
pub use reliance::{Reliance, Witness};

use imports::{scan_body, ScanContext};
use walk::{walk_body, Node};

/// How multiple return statements combine into one verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnPolicy {
    /// Every reachable return must be tainted.
    #[default]
    All,
    /// One tainted return suffices.
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub deny_list: BTreeSet<String>,
    pub package_alias: String,
    pub opaque_type: String,
    pub return_policy: ReturnPolicy,
    /// Dotted members the package exports; `None` skips the hallucination check.
    pub known_members: Option<BTreeSet<String>>,
    pub flag_private_access: bool,
}

impl VerifierConfig {
    pub fn new(package_alias: impl Into<String>, deny: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            deny_list: deny.into_iter().map(Into::into).collect(),
            package_alias: package_alias.into(),
            opaque_type: DEFAULT_OPAQUE_TYPE.into(),
            return_policy: ReturnPolicy::All,
            known_members: None,
            flag_private_access: true,
        }
    }

    /// Denies the source package and knows every mapped member.
    pub fn from_map(map: &ObfuscationMap, opaque_type: &str) -> Self {
        let alias = &map.package_alias;
        let mut known = BTreeSet::new();
        for ns in map.obfuscated_namespaces() {
            for i in 1..=ns.len() {
                known.insert(format!("{alias}.{}", ns[..i].join(".")));
            }
        }
        for q in map.name_map.values() {
            known.insert(format!("{alias}.{}", q.dotted()));
        }
        known.insert(format!("{alias}.{opaque_type}"));
        Self {
            deny_list: [map.source_package.clone()].into(),
            package_alias: alias.clone(),
            opaque_type: opaque_type.into(),
            return_policy: ReturnPolicy::All,
            known_members: Some(known),
            flag_private_access: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    pub span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticReport {
    pub parse_ok: bool,
    pub forbidden_imports: Vec<ForbiddenImport>,
    pub reliance: Reliance,
    pub witness: Option<Witness>,
    /// Local import binding to the module path it names.
    pub alias_table: BTreeMap<String, String>,
    /// Package members referenced but not exported.
    pub unknown_package_members: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Forbidden imports in `source`; `(false, [])` when it does not parse.
pub fn scan_imports(source: &str, deny: &BTreeSet<String>) -> (bool, Vec<ForbiddenImport>) {
    match parse_module(source, "<solution>") {
        Ok(m) => {
            let ctx = ScanContext { deny, private_guard: None };
            (true, scan_body(&m.body, &m.index, &ctx, 0))
        }
        Err(_) => (false, Vec::new()),
    }
}

fn alias_table(body: &[Stmt]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    walk_body(body, &mut |n| match n {
        Node::Stmt(Stmt::Import(i)) => {
            for a in &i.names {
                let local = match &a.asname {
                    Some(l) => l.to_string(),
                    None => a.name.split('.').next().unwrap_or_default().to_string(),
                };
                let target = match &a.asname {
                    Some(_) => a.name.to_string(),
                    None => local.clone(),
                };
                out.insert(local, target);
            }
        }
        Node::Stmt(Stmt::ImportFrom(f)) => {
            let level = f.level.as_ref().map(|l| l.to_u32()).unwrap_or(0);
            let module = f.module.as_ref().map(|m| m.to_string()).unwrap_or_default();
            let prefix = ".".repeat(level as usize) + &module;
            for a in &f.names {
                if a.name.as_str() == "*" {
                    continue;
                }
                let local = a.asname.as_ref().unwrap_or(&a.name).to_string();
                let sep = if prefix.ends_with('.') || prefix.is_empty() { "" } else { "." };
                out.insert(local, format!("{prefix}{sep}{}", a.name));
            }
        }
        _ => {}
    });
    out
}

/// Full static report for the function `stub_name` in `source`.
pub fn analyze(source: &str, stub_name: &str, cfg: &VerifierConfig) -> StaticReport {
    let module = match parse_module(source, "<solution>") {
        Ok(m) => m,
        Err(e) => {
            return StaticReport {
                parse_ok: false,
                forbidden_imports: Vec::new(),
                reliance: Reliance::Unknown,
                witness: None,
                alias_table: BTreeMap::new(),
                unknown_package_members: Vec::new(),
                diagnostics: vec![Diagnostic {
                    code: "syntax_error".into(),
                    message: e.message,
                    span: Some(Span {
                        line: e.line,
                        col: e.col,
                        end_line: e.line,
                        end_col: e.col,
                    }),
                }],
            };
        }
    };
    let ctx = ScanContext {
        deny: &cfg.deny_list,
        private_guard: cfg.flag_private_access.then_some(cfg.package_alias.as_str()),
    };
    let forbidden_imports = scan_body(&module.body, &module.index, &ctx, 0);
    let alias_table = alias_table(&module.body);

    let stub = module.body.iter().rev().find_map(|s| match s {
        Stmt::FunctionDef(d) if d.name.as_str() == stub_name => Some(d.range.start()),
        Stmt::AsyncFunctionDef(d) if d.name.as_str() == stub_name => Some(d.range.start()),
        _ => None,
    });
    let mut analyzer = reliance::Analyzer::new(&module.body, &module.index, &cfg.package_alias, &cfg.opaque_type);
    analyzer.prepare(&module.body);
    let (reliance, witness, refs, mut diagnostics) = match stub.and_then(|s| analyzer.function_id(s)) {
        Some(id) => {
            let o = analyzer.judge(id, cfg.return_policy);
            (o.reliance, o.witness, o.member_refs, o.diagnostics)
        }
        None => (
            Reliance::NotReliant,
            None,
            BTreeSet::new(),
            vec![Diagnostic {
                code: "stub_missing".into(),
                message: format!("no top-level function named {stub_name}"),
                span: None,
            }],
        ),
    };
    let unknown_package_members: Vec<String> = match &cfg.known_members {
        Some(known) => refs
            .into_iter()
            .filter(|r| !known.contains(r))
            .filter(|r| !r.split('.').skip(1).any(|s| s.starts_with('_')))
            .collect(),
        None => Vec::new(),
    };
    for m in &unknown_package_members {
        diagnostics.push(Diagnostic {
            code: "unknown_member".into(),
            message: format!("{m} is not exported by the package"),
            span: None,
        });
    }
    StaticReport {
        parse_ok: true,
        forbidden_imports,
        reliance,
        witness,
        alias_table,
        unknown_package_members,
        diagnostics,
    }
}
