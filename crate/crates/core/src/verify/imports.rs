//! Forbidden-import detection with literal constant folding.

use std::collections::{BTreeMap, BTreeSet};

use rustpython_parser::ast::{self, Constant, Expr, Operator, Stmt};
use serde::{Deserialize, Serialize};

use super::walk::{dotted_chain, walk_body, Node};
use crate::python::{parse_module, LineIndex, Ranged, Span};

/// Nesting bound for `exec`/`eval` of folded source.
const MAX_EXEC_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportKind {
    Import,
    FromImport,
    DynamicImport,
    Exec,
    ModuleTable,
    PrivateAccess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForbiddenImport {
    pub name: String,
    pub kind: ImportKind,
    pub span: Span,
}

/// Names bound exactly once, to a foldable string.
pub(crate) fn string_constants(body: &[Stmt]) -> BTreeMap<String, String> {
    let mut assigned: BTreeMap<String, usize> = BTreeMap::new();
    let mut candidates: Vec<(&str, &Expr)> = Vec::new();
    walk_body(body, &mut |n| {
        let Node::Stmt(s) = n else { return };
        let mut bump = |e: &Expr| {
            super::walk::walk_expr(e, &mut |m| {
                if let Node::Expr(Expr::Name(name)) = m {
                    *assigned.entry(name.id.to_string()).or_default() += 1;
                }
            })
        };
        match s {
            Stmt::Assign(a) => {
                for t in &a.targets {
                    bump(t);
                    if let (Expr::Name(name), 1) = (t, a.targets.len()) {
                        candidates.push((name.id.as_str(), &a.value));
                    }
                }
            }
            Stmt::AnnAssign(a) => {
                bump(&a.target);
                if let (Expr::Name(name), Some(v)) = (a.target.as_ref(), &a.value) {
                    candidates.push((name.id.as_str(), v));
                }
            }
            Stmt::AugAssign(a) => bump(&a.target),
            Stmt::For(f) => bump(&f.target),
            Stmt::AsyncFor(f) => bump(&f.target),
            Stmt::With(w) => w.items.iter().filter_map(|i| i.optional_vars.as_deref()).for_each(&mut bump),
            _ => {}
        }
    });
    let mut consts = BTreeMap::new();
    loop {
        let before = consts.len();
        for (name, value) in &candidates {
            if assigned.get(*name) == Some(&1) && !consts.contains_key(*name) {
                if let Some(s) = fold(value, &consts) {
                    consts.insert(name.to_string(), s);
                }
            }
        }
        if consts.len() == before {
            return consts;
        }
    }
}

fn const_int(e: &Expr) -> Option<i64> {
    match e {
        Expr::Constant(c) => match &c.value {
            Constant::Int(i) => i.to_string().parse().ok(),
            _ => None,
        },
        Expr::UnaryOp(u) if matches!(u.op, ast::UnaryOp::USub) => const_int(&u.operand).map(|i| -i),
        _ => None,
    }
}

/// String value of a literal-only expression: concatenation, repetition,
/// `sep.join([...])`, reversal slices, literal f-strings and names bound to
/// such values.
pub(crate) fn fold(e: &Expr, consts: &BTreeMap<String, String>) -> Option<String> {
    match e {
        Expr::Constant(c) => match &c.value {
            Constant::Str(s) => Some(s.clone()),
            _ => None,
        },
        Expr::Name(n) => consts.get(n.id.as_str()).cloned(),
        Expr::BinOp(b) => match b.op {
            Operator::Add => Some(fold(&b.left, consts)? + &fold(&b.right, consts)?),
            Operator::Mult => {
                let (s, n) = match (fold(&b.left, consts), const_int(&b.right)) {
                    (Some(s), Some(n)) => (s, n),
                    _ => (fold(&b.right, consts)?, const_int(&b.left)?),
                };
                Some(s.repeat(n.clamp(0, 64) as usize))
            }
            _ => None,
        },
        Expr::JoinedStr(j) => {
            let mut out = String::new();
            for v in &j.values {
                match v {
                    Expr::FormattedValue(fv) if fv.format_spec.is_none() => out.push_str(&fold(&fv.value, consts)?),
                    other => out.push_str(&fold(other, consts)?),
                }
            }
            Some(out)
        }
        Expr::Call(c) if c.keywords.is_empty() && c.args.len() == 1 => {
            let Expr::Attribute(a) = c.func.as_ref() else { return None };
            if a.attr.as_str() != "join" {
                return None;
            }
            let sep = fold(&a.value, consts)?;
            let parts = match &c.args[0] {
                Expr::List(l) => &l.elts,
                Expr::Tuple(t) => &t.elts,
                _ => return None,
            };
            let parts: Option<Vec<String>> = parts.iter().map(|p| fold(p, consts)).collect();
            Some(parts?.join(&sep))
        }
        Expr::Subscript(s) => {
            let base = fold(&s.value, consts)?;
            let Expr::Slice(sl) = s.slice.as_ref() else { return None };
            if sl.lower.is_none() && sl.upper.is_none() && sl.step.as_deref().and_then(const_int) == Some(-1) {
                Some(base.chars().rev().collect())
            } else {
                None
            }
        }
        _ => None,
    }
}

fn denied(name: &str, deny: &BTreeSet<String>) -> bool {
    deny.contains(name.split('.').next().unwrap_or(name))
}

fn is_dynamic_import(func: &Expr) -> bool {
    match func {
        Expr::Name(n) => matches!(n.id.as_str(), "__import__" | "import_module"),
        Expr::Attribute(a) => matches!(a.attr.as_str(), "__import__" | "import_module"),
        _ => false,
    }
}

fn exec_like(func: &Expr) -> bool {
    matches!(func, Expr::Name(n) if matches!(n.id.as_str(), "exec" | "eval" | "compile"))
}

fn first_arg<'a>(call: &'a ast::ExprCall, keyword: &str) -> Option<&'a Expr> {
    call.args.first().or_else(|| {
        call.keywords
            .iter()
            .find(|k| k.arg.as_ref().is_some_and(|a| a.as_str() == keyword))
            .map(|k| &k.value)
    })
}

pub(crate) struct ScanContext<'a> {
    pub deny: &'a BTreeSet<String>,
    /// Package whose underscore members count as forbidden access.
    pub private_guard: Option<&'a str>,
}

/// Hits in `body`, located through `index`.
pub(crate) fn scan_body(
    body: &[Stmt],
    index: &LineIndex,
    ctx: &ScanContext<'_>,
    depth: usize,
) -> Vec<ForbiddenImport> {
    let consts = string_constants(body);
    let mut hits = Vec::new();
    let mut push = |name: String, kind: ImportKind, span: Span| {
        hits.push(ForbiddenImport { name, kind, span });
    };
    // Local names bound to the guarded package, for private-member checks.
    let mut guard_names: BTreeSet<String> = BTreeSet::new();
    if let Some(g) = ctx.private_guard {
        walk_body(body, &mut |n| {
            if let Node::Stmt(Stmt::Import(i)) = n {
                for a in &i.names {
                    if a.name.as_str() == g || a.name.as_str().starts_with(&format!("{g}.")) {
                        let local = match &a.asname {
                            Some(x) => x.to_string(),
                            None => a.name.split('.').next().unwrap_or_default().to_string(),
                        };
                        guard_names.insert(local);
                    }
                }
            }
        });
    }
    walk_body(body, &mut |n| match n {
        Node::Stmt(Stmt::Import(i)) => {
            for a in &i.names {
                if denied(a.name.as_str(), ctx.deny) {
                    push(a.name.to_string(), ImportKind::Import, index.span(a.range()));
                }
            }
        }
        Node::Stmt(Stmt::ImportFrom(f)) => {
            let level = f.level.as_ref().map(|l| l.to_u32()).unwrap_or(0);
            if level > 0 {
                return;
            }
            if let Some(m) = &f.module {
                if denied(m.as_str(), ctx.deny) {
                    push(m.to_string(), ImportKind::FromImport, index.span(f.range()));
                }
                if let Some(g) = ctx.private_guard {
                    let private = m.as_str() == g
                        && f.names.iter().any(|a| a.name.starts_with('_') && !a.name.starts_with("__"));
                    if private || m.as_str().starts_with(&format!("{g}._")) {
                        push(m.to_string(), ImportKind::PrivateAccess, index.span(f.range()));
                    }
                }
            }
        }
        Node::Expr(Expr::Call(c)) => {
            if is_dynamic_import(&c.func) {
                if let Some(name) = first_arg(c, "name").and_then(|a| fold(a, &consts)) {
                    if denied(&name, ctx.deny) {
                        push(name, ImportKind::DynamicImport, index.span(c.range()));
                    }
                }
            } else if matches!(c.func.as_ref(), Expr::Name(n) if n.id.as_str() == "getattr") && c.args.len() >= 2 {
                let Some(chain) = dotted_chain(&c.args[0]) else { return };
                if let Some(attr) = fold(&c.args[1], &consts) {
                    if guard_names.contains(chain[0]) && attr.starts_with('_') && !attr.starts_with("__") {
                        push(format!("{}.{attr}", chain.join(".")), ImportKind::PrivateAccess, index.span(c.range()));
                    }
                }
            } else if exec_like(&c.func) && depth < MAX_EXEC_DEPTH {
                if let Some(src) = first_arg(c, "source").and_then(|a| fold(a, &consts)) {
                    if let Ok(inner) = parse_module(&src, "<exec>") {
                        let span = index.span(c.range());
                        for h in scan_body(&inner.body, &inner.index, ctx, depth + 1) {
                            push(h.name, ImportKind::Exec, span);
                        }
                    }
                }
            }
        }
        Node::Expr(Expr::Subscript(s)) => {
            let is_table = matches!(dotted_chain(&s.value).as_deref(), Some([.., "modules"]));
            if is_table {
                if let Some(name) = fold(&s.slice, &consts) {
                    if denied(&name, ctx.deny) {
                        push(name, ImportKind::ModuleTable, index.span(s.range()));
                    }
                }
            }
        }
        Node::Expr(Expr::Attribute(a)) if a.attr.starts_with('_') && !a.attr.starts_with("__") => {
            if let Some(chain) = dotted_chain(&a.value) {
                let nested = chain[1..].iter().any(|s| s.starts_with('_'));
                if guard_names.contains(chain[0]) && !nested {
                    let mut name = chain.join(".");
                    name.push('.');
                    name.push_str(a.attr.as_str());
                    push(name, ImportKind::PrivateAccess, index.span(a.range()));
                }
            }
        }
        _ => {}
    });
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(src: &str) -> Vec<(String, ImportKind)> {
        let m = parse_module(src, "<t>").unwrap();
        let deny: BTreeSet<String> = ["numpy".to_string()].into();
        let ctx = ScanContext { deny: &deny, private_guard: Some("zwc") };
        scan_body(&m.body, &m.index, &ctx, 0)
            .into_iter()
            .map(|h| (h.name, h.kind))
            .collect()
    }

    #[test]
    fn static_forms() {
        assert_eq!(scan("import numpy as np\n"), vec![("numpy".into(), ImportKind::Import)]);
        assert_eq!(scan("import numpy.linalg\n"), vec![("numpy.linalg".into(), ImportKind::Import)]);
        assert_eq!(scan("from numpy import mean\n"), vec![("numpy".into(), ImportKind::FromImport)]);
        assert!(scan("import zwc\nimport numpyish\nfrom . import numpy\n").is_empty());
    }

    #[test]
    fn folded_dynamic_forms() {
        let cases = [
            "m = __import__('num' + 'py')\n",
            "import importlib\nm = importlib.import_module(''.join(['nu', 'mpy']))\n",
            "x = 'ypmun'[::-1]\nm = __import__(x)\n",
            "a = 'num'\nb = a + 'py'\nm = __import__(f'{b}')\n",
            "import sys\nm = sys.modules['num' 'py']\n",
        ];
        for src in cases {
            assert_eq!(scan(src).len(), 1, "{src}");
        }
        assert_eq!(scan("exec('import ' + 'numpy')\n"), vec![("numpy".into(), ImportKind::Exec)]);
    }

    #[test]
    fn non_literal_dynamic_imports_are_left_to_the_runtime_hook() {
        assert!(scan("def f(n):\n    return __import__(n)\n").is_empty());
        assert!(scan("x = 'nu'\nx = x + 'mpy'\nm = __import__(x)\n").is_empty());
    }

    #[test]
    fn private_wrapper_members() {
        let hits = scan("import zwc\nsrc = zwc._rt._source\n");
        assert_eq!(hits, vec![("zwc._rt".into(), ImportKind::PrivateAccess)]);
        assert_eq!(scan("from zwc._runtime import _source\n").len(), 1);
        assert!(scan("import zwc\nprint(zwc.__name__)\n").is_empty());
    }
}
