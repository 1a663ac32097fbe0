//! Return-value reliance: flow-sensitive may-taint over one module.
//!
//! A value is tainted when it was produced by a call whose callee resolves to
//! a member of the obfuscated package, or is derived from such a value by
//! any expression, call argument, container mutation or iteration. Control
//! dependence (branch conditions) does not taint.

use std::collections::{BTreeMap, BTreeSet};

use rustpython_parser::ast::{self, Expr, Stmt};
use serde::{Deserialize, Serialize};

use super::imports::{fold, string_constants};
use super::walk::{root_name, walk_body, Node};
use super::{Diagnostic, ReturnPolicy};
use crate::python::{LineIndex, Ranged, Span};

const MAX_ROUNDS: usize = 32;

/// Methods that store their arguments into the receiver.
const MUTATORS: &[&str] = &[
    "append",
    "extend",
    "insert",
    "add",
    "update",
    "setdefault",
    "appendleft",
    "extendleft",
    "push",
    "put",
    "put_nowait",
    "write",
    "writelines",
    "__setitem__",
];

/// Functions that store later arguments into their first argument.
const RECEIVER_FIRST: &[&str] = &["heappush", "heappushpop", "heapreplace", "insort", "insort_left", "insort_right"];

const BUILTINS: &[&str] = &[
    "abs", "all", "any", "bool", "dict", "divmod", "enumerate", "filter", "float", "format", "frozenset",
    "getattr", "hasattr", "int", "isinstance", "iter", "len", "list", "map", "max", "min", "next", "print",
    "range", "repr", "reversed", "round", "set", "slice", "sorted", "str", "sum", "tuple", "type", "zip",
    "None", "True", "False", "Exception", "ValueError", "TypeError", "KeyError", "IndexError",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// Dotted path of the package member whose result reaches the return.
    pub callee: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliance {
    Reliant,
    NotReliant,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Val {
    taint: Option<Witness>,
    /// Module or module member this value names (`zwc`, `zwc.rfx.svd_like`).
    module: Option<String>,
    /// Local function this value names.
    func: Option<usize>,
    unknown: bool,
}

impl Val {
    fn module(path: impl Into<String>) -> Self {
        Self {
            module: Some(path.into()),
            ..Self::default()
        }
    }

    fn data(&self) -> Self {
        Self {
            taint: self.taint.clone(),
            unknown: self.unknown,
            ..Self::default()
        }
    }

    fn absorb(&mut self, other: &Val) {
        if self.taint.is_none() {
            self.taint = other.taint.clone();
        }
        self.unknown |= other.unknown;
    }

    fn join(&self, other: &Val) -> Val {
        let mut out = self.clone();
        out.absorb(other);
        if out.module != other.module {
            out.module = out.module.or_else(|| other.module.clone());
        }
        if out.func != other.func {
            out.func = out.func.or(other.func);
        }
        out
    }
}

type Env = BTreeMap<String, Val>;

fn join_env(a: &Env, b: &Env) -> Env {
    let mut out = a.clone();
    for (k, v) in b {
        match out.get_mut(k) {
            Some(x) => *x = x.join(v),
            None => {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    out
}

fn join_opt(a: Option<Env>, b: Option<Env>) -> Option<Env> {
    match (a, b) {
        (Some(a), Some(b)) => Some(join_env(&a, &b)),
        (a, b) => a.or(b),
    }
}

struct Func<'a> {
    args: &'a ast::Arguments,
    body: &'a [Stmt],
    closure: Env,
}

#[derive(Default)]
struct Frame {
    returns: Vec<(Val, Span)>,
}

pub(crate) struct Outcome {
    pub reliance: Reliance,
    pub witness: Option<Witness>,
    pub member_refs: BTreeSet<String>,
    pub diagnostics: Vec<Diagnostic>,
}

pub(crate) struct Analyzer<'a> {
    alias: &'a str,
    opaque: String,
    index: &'a LineIndex,
    consts: BTreeMap<String, String>,
    funcs: Vec<Func<'a>>,
    func_ids: BTreeMap<u32, usize>,
    summaries: Vec<Option<Witness>>,
    globals: Env,
    star_modules: Vec<String>,
    member_refs: BTreeSet<String>,
    diagnostics: BTreeMap<(String, Option<Span>), String>,
    closure_changed: bool,
    yields: Vec<Val>,
}

fn args_of(a: &ast::Arguments) -> impl Iterator<Item = &str> {
    a.posonlyargs
        .iter()
        .chain(&a.args)
        .chain(&a.kwonlyargs)
        .map(|x| x.def.arg.as_str())
        .chain(a.vararg.iter().map(|x| x.arg.as_str()))
        .chain(a.kwarg.iter().map(|x| x.arg.as_str()))
}

impl<'a> Analyzer<'a> {
    pub(crate) fn new(body: &'a [Stmt], index: &'a LineIndex, alias: &'a str, opaque: &str) -> Self {
        let mut funcs = Vec::new();
        let mut func_ids = BTreeMap::new();
        walk_body(body, &mut |n| {
            let (args, fbody, start) = match n {
                Node::Stmt(Stmt::FunctionDef(d)) => (d.args.as_ref(), d.body.as_slice(), d.range.start()),
                Node::Stmt(Stmt::AsyncFunctionDef(d)) => (d.args.as_ref(), d.body.as_slice(), d.range.start()),
                _ => return,
            };
            func_ids.insert(u32::from(start), funcs.len());
            funcs.push(Func {
                args,
                body: fbody,
                closure: Env::new(),
            });
        });
        let n = funcs.len();
        Self {
            alias,
            opaque: format!("{alias}.{opaque}"),
            index,
            consts: string_constants(body),
            funcs,
            func_ids,
            summaries: vec![None; n],
            globals: Env::new(),
            star_modules: Vec::new(),
            member_refs: BTreeSet::new(),
            diagnostics: BTreeMap::new(),
            closure_changed: false,
            yields: Vec::new(),
        }
    }

    fn diag(&mut self, code: &str, message: String, span: Option<Span>) {
        self.diagnostics.entry((code.to_string(), span)).or_insert(message);
    }

    fn span(&self, r: &impl Ranged) -> Span {
        self.index.span(r.range())
    }

    /// Member of the obfuscated package that counts as a taint source.
    fn is_source(&self, path: &str) -> bool {
        let Some(rest) = path.strip_prefix(self.alias).and_then(|r| r.strip_prefix('.')) else {
            return false;
        };
        path != self.opaque && !rest.split('.').any(|s| s.starts_with('_'))
    }

    fn source_of(&self, v: &Val, span: Span) -> Option<Witness> {
        if let Some(m) = &v.module {
            if self.is_source(m) && m != &self.opaque {
                return Some(Witness {
                    callee: m.clone(),
                    span,
                });
            }
        }
        v.func.and_then(|id| self.summaries[id].clone())
    }

    fn lookup(&self, name: &str, env: &Env) -> Val {
        if let Some(v) = env.get(name) {
            return v.clone();
        }
        if let Some(v) = self.globals.get(name) {
            return v.clone();
        }
        if !BUILTINS.contains(&name) {
            if let Some(m) = self.star_modules.first() {
                return Val::module(format!("{m}.{name}"));
            }
        }
        Val::default()
    }

    fn attr(&mut self, base: &Val, attr: &str) -> Val {
        match &base.module {
            Some(m) => {
                let path = format!("{m}.{attr}");
                if m == self.alias || m.starts_with(&format!("{}.", self.alias)) {
                    self.member_refs.insert(path.clone());
                }
                Val {
                    module: Some(path),
                    ..base.data()
                }
            }
            None => base.data(),
        }
    }

    fn weak_update(&self, target: &Expr, v: &Val, env: &mut Env) {
        if let Some(root) = root_name(target) {
            let mut cur = self.lookup(root, env);
            cur.absorb(v);
            env.insert(root.to_string(), cur);
        }
    }

    fn bind(&mut self, target: &Expr, v: Val, env: &mut Env) {
        match target {
            Expr::Name(n) => {
                env.insert(n.id.to_string(), v);
            }
            Expr::Tuple(t) => t.elts.iter().for_each(|e| self.bind(e, v.data(), env)),
            Expr::List(l) => l.elts.iter().for_each(|e| self.bind(e, v.data(), env)),
            Expr::Starred(s) => self.bind(&s.value, v.data(), env),
            other => self.weak_update(other, &v, env),
        }
    }

    fn eval_all<'e>(&mut self, exprs: impl IntoIterator<Item = &'e Expr>, env: &mut Env) -> Val {
        let mut acc = Val::default();
        for e in exprs {
            let v = self.eval(e, env);
            acc.absorb(&v);
        }
        acc
    }

    fn comprehension(&mut self, gens: &[ast::Comprehension], outs: &[&Expr], env: &mut Env) -> Val {
        let mut scope = env.clone();
        let mut bound = BTreeSet::new();
        for g in gens {
            let it = self.eval(&g.iter, &mut scope);
            walk_targets(&g.target, &mut bound);
            self.bind(&g.target, it.data(), &mut scope);
            for cond in &g.ifs {
                self.eval(cond, &mut scope);
            }
        }
        let out = self.eval_all(outs.iter().copied(), &mut scope);
        for (k, v) in scope {
            if !bound.contains(&k) {
                match env.get_mut(&k) {
                    Some(cur) => cur.absorb(&v),
                    None => {
                        env.insert(k, v);
                    }
                }
            }
        }
        out.data()
    }

    fn eval(&mut self, e: &Expr, env: &mut Env) -> Val {
        match e {
            Expr::Name(n) => self.lookup(n.id.as_str(), env),
            Expr::Constant(_) => Val::default(),
            Expr::Attribute(a) => {
                let base = self.eval(&a.value, env);
                self.attr(&base, a.attr.as_str())
            }
            Expr::Call(c) => self.eval_call(c, env),
            Expr::BinOp(b) => self.eval_all([b.left.as_ref(), b.right.as_ref()], env).data(),
            Expr::UnaryOp(u) => self.eval(&u.operand, env).data(),
            Expr::BoolOp(b) => self.eval_all(&b.values, env).data(),
            Expr::Compare(c) => self.eval_all(std::iter::once(c.left.as_ref()).chain(&c.comparators), env).data(),
            Expr::IfExp(x) => {
                self.eval(&x.test, env);
                let a = self.eval(&x.body, env);
                let b = self.eval(&x.orelse, env);
                a.join(&b)
            }
            Expr::List(l) => self.eval_all(&l.elts, env).data(),
            Expr::Tuple(t) => self.eval_all(&t.elts, env).data(),
            Expr::Set(s) => self.eval_all(&s.elts, env).data(),
            Expr::Dict(d) => self.eval_all(d.keys.iter().flatten().chain(&d.values), env).data(),
            Expr::Subscript(s) => self.eval_all([s.value.as_ref(), s.slice.as_ref()], env).data(),
            Expr::Slice(s) => self
                .eval_all([&s.lower, &s.upper, &s.step].into_iter().filter_map(|o| o.as_deref()), env)
                .data(),
            Expr::Starred(s) => self.eval(&s.value, env),
            Expr::JoinedStr(j) => self.eval_all(&j.values, env).data(),
            Expr::FormattedValue(f) => self.eval(&f.value, env).data(),
            Expr::ListComp(x) => self.comprehension(&x.generators, &[&x.elt], env),
            Expr::SetComp(x) => self.comprehension(&x.generators, &[&x.elt], env),
            Expr::GeneratorExp(x) => self.comprehension(&x.generators, &[&x.elt], env),
            Expr::DictComp(x) => self.comprehension(&x.generators, &[&x.key, &x.value], env),
            Expr::Lambda(l) => {
                let mut scope = env.clone();
                for p in args_of(&l.args) {
                    scope.insert(p.to_string(), Val::default());
                }
                self.eval(&l.body, &mut scope).data()
            }
            Expr::NamedExpr(n) => {
                let v = self.eval(&n.value, env);
                self.bind(&n.target, v.clone(), env);
                v
            }
            Expr::Await(a) => self.eval(&a.value, env),
            Expr::Yield(y) => {
                if let Some(v) = &y.value {
                    let v = self.eval(v, env);
                    self.yields.push(v);
                }
                Val::default()
            }
            Expr::YieldFrom(y) => {
                let v = self.eval(&y.value, env);
                self.yields.push(v.data());
                Val::default()
            }
        }
    }

    fn eval_call(&mut self, c: &ast::ExprCall, env: &mut Env) -> Val {
        let span = self.span(c);
        let callee_name = match c.func.as_ref() {
            Expr::Name(n) => Some(n.id.as_str()),
            Expr::Attribute(a) => Some(a.attr.as_str()),
            _ => None,
        };
        let shadowed = matches!(c.func.as_ref(), Expr::Name(n) if env.contains_key(n.id.as_str()) || self.globals.contains_key(n.id.as_str()));
        if let (Some(name), false, Expr::Name(_)) = (callee_name, shadowed, c.func.as_ref()) {
            match name {
                "getattr" if c.args.len() >= 2 => {
                    let base = self.eval(&c.args[0], env);
                    let rest = self.eval_all(c.args[1..].iter(), env);
                    if base.module.is_some() {
                        return match fold(&c.args[1], &self.consts) {
                            Some(attr) => self.attr(&base, &attr),
                            None => {
                                self.diag(
                                    "dynamic_attribute",
                                    "attribute of a module computed at run time".into(),
                                    Some(span),
                                );
                                Val {
                                    unknown: true,
                                    ..base.data()
                                }
                            }
                        };
                    }
                    let mut out = base.data();
                    out.absorb(&rest);
                    return out;
                }
                "__import__" | "import_module" => {
                    let arg = c.args.first().and_then(|a| fold(a, &self.consts));
                    self.eval_all(&c.args, env);
                    return match arg {
                        Some(m) => Val::module(m),
                        None => {
                            self.diag("dynamic_import", "module name computed at run time".into(), Some(span));
                            Val {
                                unknown: true,
                                ..Val::default()
                            }
                        }
                    };
                }
                "eval" | "exec" | "globals" | "locals" | "vars" => {
                    self.eval_all(&c.args, env);
                    self.diag("reflection", format!("{name}() hides data flow"), Some(span));
                    return Val {
                        unknown: true,
                        ..Val::default()
                    };
                }
                _ => {}
            }
        }
        if let (Expr::Attribute(a), Some("import_module")) = (c.func.as_ref(), callee_name) {
            if let Some(m) = c.args.first().and_then(|x| fold(x, &self.consts)) {
                self.eval(&a.value, env);
                return Val::module(m);
            }
        }

        let fv = self.eval(&c.func, env);
        let mut acc = Val::default();
        let arg_exprs = c.args.iter().chain(c.keywords.iter().map(|k| &k.value));
        for (i, e) in arg_exprs.enumerate() {
            let v = self.eval(e, env);
            let s = self.span(e);
            if acc.taint.is_none() {
                acc.taint = v.taint.clone().or_else(|| self.source_of(&v, s));
            }
            acc.unknown |= v.unknown;
            if i > 0 {
                if let (Some(name), Some(first)) = (callee_name, c.args.first()) {
                    if RECEIVER_FIRST.contains(&name) {
                        self.weak_update(first, &v, env);
                    }
                }
            }
        }

        if let Expr::Attribute(a) = c.func.as_ref() {
            if fv.module.is_none() && MUTATORS.contains(&a.attr.as_str()) {
                self.weak_update(&a.value, &acc, env);
            }
        }

        if let Some(path) = &fv.module {
            if self.is_source(path) {
                return Val {
                    taint: Some(Witness {
                        callee: path.clone(),
                        span,
                    }),
                    unknown: acc.unknown,
                    ..Val::default()
                };
            }
            return acc;
        }
        if let Some(id) = fv.func {
            if acc.taint.is_none() {
                acc.taint = self.summaries[id].clone();
            }
            return acc;
        }
        acc.absorb(&fv);
        acc
    }

    fn exec_block(&mut self, body: &'a [Stmt], mut env: Env, fr: &mut Frame) -> Option<Env> {
        for s in body {
            env = self.exec_stmt(s, env, fr)?;
        }
        Some(env)
    }

    fn loop_fixpoint(
        &mut self,
        target: Option<(&Expr, Val)>,
        test: Option<&Expr>,
        body: &'a [Stmt],
        env: Env,
        fr: &mut Frame,
    ) -> Env {
        let mut head = env;
        for _ in 0..MAX_ROUNDS {
            let mut entry = head.clone();
            if let Some(t) = test {
                self.eval(t, &mut entry);
            }
            if let Some((t, v)) = &target {
                self.bind(t, v.clone(), &mut entry);
            }
            let out = self.exec_block(body, entry.clone(), fr);
            let next = join_env(&head, &join_opt(Some(entry), out).expect("entry present"));
            if next == head {
                break;
            }
            head = next;
        }
        head
    }

    fn exec_stmt(&mut self, s: &'a Stmt, mut env: Env, fr: &mut Frame) -> Option<Env> {
        match s {
            Stmt::Return(r) => {
                let v = match &r.value {
                    Some(v) => self.eval(v, &mut env),
                    None => Val::default(),
                };
                fr.returns.push((v, self.span(r)));
                return None;
            }
            Stmt::Raise(r) => {
                if let Some(e) = &r.exc {
                    self.eval(e, &mut env);
                }
                return None;
            }
            Stmt::Assign(a) => {
                let pairwise = match (a.targets.as_slice(), a.value.as_ref()) {
                    ([Expr::Tuple(t)], Expr::Tuple(v)) if t.elts.len() == v.elts.len() => Some((&t.elts, &v.elts)),
                    ([Expr::List(t)], Expr::List(v)) if t.elts.len() == v.elts.len() => Some((&t.elts, &v.elts)),
                    _ => None,
                };
                let no_star = |xs: &Vec<Expr>| !xs.iter().any(|x| matches!(x, Expr::Starred(_)));
                match pairwise {
                    Some((ts, vs)) if no_star(ts) && no_star(vs) => {
                        let vals: Vec<Val> = vs.iter().map(|v| self.eval(v, &mut env)).collect();
                        for (t, v) in ts.iter().zip(vals) {
                            self.bind(t, v, &mut env);
                        }
                    }
                    _ => {
                        let v = self.eval(&a.value, &mut env);
                        for t in &a.targets {
                            self.bind(t, v.clone(), &mut env);
                        }
                    }
                }
            }
            Stmt::AugAssign(a) => {
                let v = self.eval(&a.value, &mut env);
                match a.target.as_ref() {
                    Expr::Name(n) => {
                        let cur = self.lookup(n.id.as_str(), &env).data();
                        env.insert(n.id.to_string(), cur.join(&v.data()));
                    }
                    other => {
                        self.eval(other, &mut env);
                        self.weak_update(other, &v, &mut env);
                    }
                }
            }
            Stmt::AnnAssign(a) => {
                if let Some(value) = &a.value {
                    let v = self.eval(value, &mut env);
                    self.bind(&a.target, v, &mut env);
                }
            }
            Stmt::Expr(e) => {
                self.eval(&e.value, &mut env);
            }
            Stmt::If(x) => {
                self.eval(&x.test, &mut env);
                let t = self.exec_block(&x.body, env.clone(), fr);
                let f = self.exec_block(&x.orelse, env, fr);
                return join_opt(t, f);
            }
            Stmt::For(x) => {
                let it = self.eval(&x.iter, &mut env).data();
                let head = self.loop_fixpoint(Some((&x.target, it)), None, &x.body, env, fr);
                return self.exec_block(&x.orelse, head, fr);
            }
            Stmt::AsyncFor(x) => {
                let it = self.eval(&x.iter, &mut env).data();
                let head = self.loop_fixpoint(Some((&x.target, it)), None, &x.body, env, fr);
                return self.exec_block(&x.orelse, head, fr);
            }
            Stmt::While(x) => {
                let head = self.loop_fixpoint(None, Some(&x.test), &x.body, env, fr);
                return self.exec_block(&x.orelse, head, fr);
            }
            Stmt::With(w) => {
                for item in &w.items {
                    let v = self.eval(&item.context_expr, &mut env);
                    if let Some(t) = &item.optional_vars {
                        self.bind(t, v, &mut env);
                    }
                }
                return self.exec_block(&w.body, env, fr);
            }
            Stmt::AsyncWith(w) => {
                for item in &w.items {
                    let v = self.eval(&item.context_expr, &mut env);
                    if let Some(t) = &item.optional_vars {
                        self.bind(t, v, &mut env);
                    }
                }
                return self.exec_block(&w.body, env, fr);
            }
            Stmt::Try(t) => return self.exec_try(&t.body, &t.handlers, &t.orelse, &t.finalbody, env, fr),
            Stmt::TryStar(t) => return self.exec_try(&t.body, &t.handlers, &t.orelse, &t.finalbody, env, fr),
            Stmt::Match(m) => {
                self.eval(&m.subject, &mut env);
                let mut out = Some(env.clone());
                for case in &m.cases {
                    let mut scope = env.clone();
                    if let Some(g) = &case.guard {
                        self.eval(g, &mut scope);
                    }
                    let r = self.exec_block(&case.body, scope, fr);
                    out = join_opt(out, r);
                }
                return out;
            }
            Stmt::Import(i) => {
                for a in &i.names {
                    match &a.asname {
                        Some(local) => {
                            env.insert(local.to_string(), Val::module(a.name.as_str()));
                        }
                        None => {
                            let root = a.name.split('.').next().unwrap_or_default();
                            env.insert(root.to_string(), Val::module(root));
                        }
                    }
                }
            }
            Stmt::ImportFrom(f) => {
                let level = f.level.as_ref().map(|l| l.to_u32()).unwrap_or(0);
                if let (0, Some(m)) = (level, &f.module) {
                    for a in &f.names {
                        if a.name.as_str() == "*" {
                            if !self.star_modules.iter().any(|s| s == m.as_str()) {
                                self.star_modules.push(m.to_string());
                            }
                            continue;
                        }
                        let local = a.asname.as_ref().unwrap_or(&a.name).to_string();
                        let path = format!("{m}.{}", a.name);
                        if m.as_str() == self.alias || m.starts_with(&format!("{}.", self.alias)) {
                            self.member_refs.insert(path.clone());
                        }
                        env.insert(local, Val::module(path));
                    }
                }
            }
            Stmt::FunctionDef(d) => {
                self.eval_all(&d.decorator_list, &mut env);
                self.define(d.range.start(), d.name.as_str(), &mut env);
            }
            Stmt::AsyncFunctionDef(d) => {
                self.eval_all(&d.decorator_list, &mut env);
                self.define(d.range.start(), d.name.as_str(), &mut env);
            }
            Stmt::ClassDef(c) => {
                env.insert(c.name.to_string(), Val::default());
            }
            Stmt::Assert(a) => {
                self.eval(&a.test, &mut env);
            }
            Stmt::Delete(_)
            | Stmt::Pass(_)
            | Stmt::Break(_)
            | Stmt::Continue(_)
            | Stmt::Global(_)
            | Stmt::Nonlocal(_)
            | Stmt::TypeAlias(_) => {}
        }
        Some(env)
    }

    fn exec_try(
        &mut self,
        body: &'a [Stmt],
        handlers: &'a [ast::ExceptHandler],
        orelse: &'a [Stmt],
        finalbody: &'a [Stmt],
        env: Env,
        fr: &mut Frame,
    ) -> Option<Env> {
        let after = self.exec_block(body, env.clone(), fr);
        let entry = join_opt(Some(env), after.clone()).expect("entry present");
        let mut out = match after {
            Some(a) => self.exec_block(orelse, a, fr),
            None => None,
        };
        for ast::ExceptHandler::ExceptHandler(h) in handlers {
            let mut scope = entry.clone();
            if let Some(n) = &h.name {
                scope.insert(n.to_string(), Val::default());
            }
            let r = self.exec_block(&h.body, scope, fr);
            out = join_opt(out, r);
        }
        match out {
            Some(o) => self.exec_block(finalbody, o, fr),
            None => {
                self.exec_block(finalbody, entry, fr);
                None
            }
        }
    }

    fn define(&mut self, start: ast::text_size::TextSize, name: &str, env: &mut Env) {
        let Some(&id) = self.func_ids.get(&u32::from(start)) else {
            return;
        };
        let joined = join_env(&self.funcs[id].closure, env);
        if joined != self.funcs[id].closure {
            self.funcs[id].closure = joined;
            self.closure_changed = true;
        }
        env.insert(
            name.to_string(),
            Val {
                func: Some(id),
                ..Val::default()
            },
        );
    }

    /// Returns reaching the end of function `id`, with clean parameters.
    fn run_function(&mut self, id: usize) -> Frame {
        let mut env = join_env(&self.globals, &self.funcs[id].closure);
        for p in args_of(self.funcs[id].args) {
            env.insert(p.to_string(), Val::default());
        }
        let mut fr = Frame::default();
        let saved = std::mem::take(&mut self.yields);
        let body = self.funcs[id].body;
        if self.exec_block(body, env, &mut fr).is_some() {
            let last = body.last().map(|s| self.span(s)).unwrap_or_default();
            fr.returns.push((Val::default(), Span { line: last.end_line, col: last.end_col, ..last }));
        }
        let yields = std::mem::replace(&mut self.yields, saved);
        if !yields.is_empty() {
            let span = fr.returns.first().map(|r| r.1).unwrap_or_default();
            let mut acc = Val::default();
            for y in &yields {
                acc.absorb(y);
            }
            fr.returns.push((acc, span));
        }
        fr
    }

    /// Executes the module body, then iterates helper summaries to a fixed
    /// point.
    pub(crate) fn prepare(&mut self, module: &'a [Stmt]) {
        for _ in 0..MAX_ROUNDS {
            let mut env = Env::new();
            let mut fr = Frame::default();
            for s in module {
                if let Some(next) = self.exec_stmt(s, env.clone(), &mut fr) {
                    env = next;
                }
            }
            let globals_changed = env != self.globals;
            self.globals = env;
            self.closure_changed = false;
            let mut changed = false;
            for id in 0..self.funcs.len() {
                let fr = self.run_function(id);
                let intrinsic = fr.returns.iter().find_map(|(v, _)| v.taint.clone());
                if self.summaries[id].is_none() && intrinsic.is_some() {
                    self.summaries[id] = intrinsic;
                    changed = true;
                }
            }
            if !changed && !globals_changed && !self.closure_changed {
                return;
            }
        }
        self.diag("no_fixpoint", "summary iteration bound reached".into(), None);
    }

    pub(crate) fn function_id(&self, def_start: ast::text_size::TextSize) -> Option<usize> {
        self.func_ids.get(&u32::from(def_start)).copied()
    }

    pub(crate) fn judge(mut self, id: usize, policy: ReturnPolicy) -> Outcome {
        let fr = self.run_function(id);
        let tainted: Vec<&Witness> = fr.returns.iter().filter_map(|(v, _)| v.taint.as_ref()).collect();
        let clean_known = fr.returns.iter().any(|(v, _)| v.taint.is_none() && !v.unknown);
        let clean_unknown = fr.returns.iter().any(|(v, _)| v.taint.is_none() && v.unknown);
        let reliance = match policy {
            ReturnPolicy::All => {
                if clean_known || fr.returns.is_empty() {
                    Reliance::NotReliant
                } else if clean_unknown {
                    Reliance::Unknown
                } else {
                    Reliance::Reliant
                }
            }
            ReturnPolicy::Any => {
                if !tainted.is_empty() {
                    Reliance::Reliant
                } else if clean_unknown {
                    Reliance::Unknown
                } else {
                    Reliance::NotReliant
                }
            }
        };
        for (v, span) in &fr.returns {
            if v.taint.is_none() {
                self.diag("untainted_return", "return value does not flow from the package".into(), Some(*span));
            }
        }
        let witness = match reliance {
            Reliance::Reliant => tainted.first().map(|w| (*w).clone()),
            _ => None,
        };
        Outcome {
            reliance,
            witness,
            member_refs: self.member_refs,
            diagnostics: self
                .diagnostics
                .into_iter()
                .map(|((code, span), message)| Diagnostic { code, message, span })
                .collect(),
        }
    }
}

fn walk_targets(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::Name(n) => {
            out.insert(n.id.to_string());
        }
        Expr::Tuple(t) => t.elts.iter().for_each(|x| walk_targets(x, out)),
        Expr::List(l) => l.elts.iter().for_each(|x| walk_targets(x, out)),
        Expr::Starred(s) => walk_targets(&s.value, out),
        _ => {}
    }
}
