//! Pre-order traversal over borrowed AST nodes.

use rustpython_parser::ast::{self, Expr, Stmt};

#[derive(Clone, Copy)]
pub(crate) enum Node<'a> {
    Stmt(&'a Stmt),
    Expr(&'a Expr),
}

pub(crate) fn walk_body<'a>(body: &'a [Stmt], f: &mut dyn FnMut(Node<'a>)) {
    for s in body {
        walk_stmt(s, f);
    }
}

fn walk_opt<'a>(e: &'a Option<Box<Expr>>, f: &mut dyn FnMut(Node<'a>)) {
    if let Some(e) = e {
        walk_expr(e, f);
    }
}

fn walk_args<'a>(args: &'a ast::Arguments, f: &mut dyn FnMut(Node<'a>)) {
    for a in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
        walk_opt(&a.default, f);
    }
}

pub(crate) fn walk_stmt<'a>(s: &'a Stmt, f: &mut dyn FnMut(Node<'a>)) {
    f(Node::Stmt(s));
    match s {
        Stmt::FunctionDef(d) => {
            d.decorator_list.iter().for_each(|e| walk_expr(e, f));
            walk_args(&d.args, f);
            walk_body(&d.body, f);
        }
        Stmt::AsyncFunctionDef(d) => {
            d.decorator_list.iter().for_each(|e| walk_expr(e, f));
            walk_args(&d.args, f);
            walk_body(&d.body, f);
        }
        Stmt::ClassDef(c) => {
            c.bases.iter().for_each(|e| walk_expr(e, f));
            c.keywords.iter().for_each(|k| walk_expr(&k.value, f));
            c.decorator_list.iter().for_each(|e| walk_expr(e, f));
            walk_body(&c.body, f);
        }
        Stmt::Return(r) => walk_opt(&r.value, f),
        Stmt::Delete(d) => d.targets.iter().for_each(|e| walk_expr(e, f)),
        Stmt::Assign(a) => {
            a.targets.iter().for_each(|e| walk_expr(e, f));
            walk_expr(&a.value, f);
        }
        Stmt::AugAssign(a) => {
            walk_expr(&a.target, f);
            walk_expr(&a.value, f);
        }
        Stmt::AnnAssign(a) => {
            walk_expr(&a.target, f);
            walk_opt(&a.value, f);
        }
        Stmt::For(x) => {
            walk_expr(&x.target, f);
            walk_expr(&x.iter, f);
            walk_body(&x.body, f);
            walk_body(&x.orelse, f);
        }
        Stmt::AsyncFor(x) => {
            walk_expr(&x.target, f);
            walk_expr(&x.iter, f);
            walk_body(&x.body, f);
            walk_body(&x.orelse, f);
        }
        Stmt::While(x) => {
            walk_expr(&x.test, f);
            walk_body(&x.body, f);
            walk_body(&x.orelse, f);
        }
        Stmt::If(x) => {
            walk_expr(&x.test, f);
            walk_body(&x.body, f);
            walk_body(&x.orelse, f);
        }
        Stmt::With(w) => {
            for item in &w.items {
                walk_expr(&item.context_expr, f);
                walk_opt(&item.optional_vars, f);
            }
            walk_body(&w.body, f);
        }
        Stmt::AsyncWith(w) => {
            for item in &w.items {
                walk_expr(&item.context_expr, f);
                walk_opt(&item.optional_vars, f);
            }
            walk_body(&w.body, f);
        }
        Stmt::Match(m) => {
            walk_expr(&m.subject, f);
            for c in &m.cases {
                walk_opt(&c.guard, f);
                walk_body(&c.body, f);
            }
        }
        Stmt::Raise(r) => {
            walk_opt(&r.exc, f);
            walk_opt(&r.cause, f);
        }
        Stmt::Try(t) => {
            walk_body(&t.body, f);
            for ast::ExceptHandler::ExceptHandler(h) in &t.handlers {
                walk_opt(&h.type_, f);
                walk_body(&h.body, f);
            }
            walk_body(&t.orelse, f);
            walk_body(&t.finalbody, f);
        }
        Stmt::TryStar(t) => {
            walk_body(&t.body, f);
            for ast::ExceptHandler::ExceptHandler(h) in &t.handlers {
                walk_opt(&h.type_, f);
                walk_body(&h.body, f);
            }
            walk_body(&t.orelse, f);
            walk_body(&t.finalbody, f);
        }
        Stmt::Assert(a) => {
            walk_expr(&a.test, f);
            walk_opt(&a.msg, f);
        }
        Stmt::Expr(e) => walk_expr(&e.value, f),
        _ => {}
    }
}

/// Direct sub-expressions of `e`, in source order.
pub(crate) fn expr_children(e: &Expr) -> Vec<&Expr> {
    fn comps(gens: &[ast::Comprehension]) -> Vec<&Expr> {
        let mut out = Vec::new();
        for g in gens {
            out.push(&g.target);
            out.push(&g.iter);
            out.extend(g.ifs.iter());
        }
        out
    }
    match e {
        Expr::BoolOp(x) => x.values.iter().collect(),
        Expr::NamedExpr(x) => vec![&x.target, &x.value],
        Expr::BinOp(x) => vec![&x.left, &x.right],
        Expr::UnaryOp(x) => vec![&x.operand],
        Expr::Lambda(x) => {
            let mut out: Vec<&Expr> = x
                .args
                .posonlyargs
                .iter()
                .chain(&x.args.args)
                .chain(&x.args.kwonlyargs)
                .filter_map(|a| a.default.as_deref())
                .collect();
            out.push(&x.body);
            out
        }
        Expr::IfExp(x) => vec![&x.test, &x.body, &x.orelse],
        Expr::Dict(x) => x.keys.iter().flatten().chain(&x.values).collect(),
        Expr::Set(x) => x.elts.iter().collect(),
        Expr::ListComp(x) => {
            let mut out = comps(&x.generators);
            out.push(&x.elt);
            out
        }
        Expr::SetComp(x) => {
            let mut out = comps(&x.generators);
            out.push(&x.elt);
            out
        }
        Expr::GeneratorExp(x) => {
            let mut out = comps(&x.generators);
            out.push(&x.elt);
            out
        }
        Expr::DictComp(x) => {
            let mut out = comps(&x.generators);
            out.push(&x.key);
            out.push(&x.value);
            out
        }
        Expr::Await(x) => vec![&x.value],
        Expr::Yield(x) => x.value.as_deref().into_iter().collect(),
        Expr::YieldFrom(x) => vec![&x.value],
        Expr::Compare(x) => std::iter::once(x.left.as_ref()).chain(&x.comparators).collect(),
        Expr::Call(x) => std::iter::once(x.func.as_ref())
            .chain(&x.args)
            .chain(x.keywords.iter().map(|k| &k.value))
            .collect(),
        Expr::FormattedValue(x) => std::iter::once(x.value.as_ref())
            .chain(x.format_spec.as_deref())
            .collect(),
        Expr::JoinedStr(x) => x.values.iter().collect(),
        Expr::Attribute(x) => vec![&x.value],
        Expr::Subscript(x) => vec![&x.value, &x.slice],
        Expr::Starred(x) => vec![&x.value],
        Expr::List(x) => x.elts.iter().collect(),
        Expr::Tuple(x) => x.elts.iter().collect(),
        Expr::Slice(x) => [&x.lower, &x.upper, &x.step]
            .into_iter()
            .filter_map(|o| o.as_deref())
            .collect(),
        Expr::Constant(_) | Expr::Name(_) => Vec::new(),
    }
}

pub(crate) fn walk_expr<'a>(e: &'a Expr, f: &mut dyn FnMut(Node<'a>)) {
    f(Node::Expr(e));
    for c in expr_children(e) {
        walk_expr(c, f);
    }
}

/// `a.b.c` as `["a", "b", "c"]` when the chain is rooted in a plain name.
pub(crate) fn dotted_chain(e: &Expr) -> Option<Vec<&str>> {
    match e {
        Expr::Name(n) => Some(vec![n.id.as_str()]),
        Expr::Attribute(a) => {
            let mut base = dotted_chain(&a.value)?;
            base.push(a.attr.as_str());
            Some(base)
        }
        _ => None,
    }
}

/// Name at the root of an attribute/subscript chain (`out` in `out[i].x`).
pub(crate) fn root_name(e: &Expr) -> Option<&str> {
    match e {
        Expr::Name(n) => Some(n.id.as_str()),
        Expr::Attribute(a) => root_name(&a.value),
        Expr::Subscript(s) => root_name(&s.value),
        Expr::Starred(s) => root_name(&s.value),
        _ => None,
    }
}
