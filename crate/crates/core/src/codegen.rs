//! Emission of the obfuscated wrapper package as Python source.
//!
//! Layout under the package alias directory:
//!
//! ```text
//! <alias>/__init__.py          root delegators, opaque type, submodule imports
//! <alias>/_runtime.py          source-library capture, opaque type, wrap/unwrap
//! <alias>/<ns>/__init__.py     one package per obfuscated namespace
//! <alias>/MANIFEST.json        exported names per module
//! ```
//!
//! The source library is imported exactly once, in `_runtime.py`, and only
//! reached through the private `_rt` handle afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rustpython_parser::ast;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::naming::ObfuscationMap;
use crate::python::{self, py_str};
use crate::surface::{is_identifier, QualifiedName};

pub const DEFAULT_OPAQUE_TYPE: &str = "ZWCArray";

/// Members the opaque type must define.
pub const REQUIRED_MEMBERS: &[&str] = &[
    "__init__",
    "__getitem__",
    "__len__",
    "__iter__",
    "__repr__",
    "__array__",
];

/// Members the opaque type may define beyond the required protocol.
pub const PERMITTED_MEMBERS: &[&str] = &[
    "__slots__",
    "__str__",
    "__eq__",
    "__ne__",
    "__hash__",
    "__getattr__",
    "__setattr__",
    "__delattr__",
];

const HEADER: &str = "# Generated file. Do not edit.\n";

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("result wrapper references unknown function {0}")]
    UnknownFunction(String),
    #[error("invalid wrapper spec: {0}")]
    Invalid(String),
    #[error("emitted file {path} does not parse: {source}")]
    Parse {
        path: String,
        source: python::SyntaxError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Structured result of a delegated function, exposed with the source
/// library's field names (e.g. `U`, `S`, `Vh`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultWrapper {
    pub function: QualifiedName,
    pub type_name: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct WrapperSpec {
    pub map: ObfuscationMap,
    pub opaque_type_name: String,
    pub scalar_unwrap: bool,
    pub result_wrappers: Vec<ResultWrapper>,
}

impl WrapperSpec {
    pub fn new(map: ObfuscationMap) -> Self {
        Self {
            map,
            opaque_type_name: DEFAULT_OPAQUE_TYPE.into(),
            scalar_unwrap: true,
            result_wrappers: Vec::new(),
        }
    }

    /// Spec with the NumPy `linalg` named-tuple results that the map covers.
    pub fn reference(map: ObfuscationMap) -> Self {
        let known: [(&str, &str, &[&str]); 5] = [
            ("linalg.eig", "EigResult", &["eigenvalues", "eigenvectors"]),
            ("linalg.eigh", "EighResult", &["eigenvalues", "eigenvectors"]),
            ("linalg.qr", "QRResult", &["Q", "R"]),
            ("linalg.slogdet", "SlogdetResult", &["sign", "logabsdet"]),
            ("linalg.svd", "SVDResult", &["U", "S", "Vh"]),
        ];
        let mut spec = Self::new(map);
        for (name, type_name, fields) in known {
            let function: QualifiedName = name.parse().expect("static name");
            if spec.map.get(&function).is_some() {
                spec.result_wrappers.push(ResultWrapper {
                    function,
                    type_name: type_name.into(),
                    fields: fields.iter().map(|f| f.to_string()).collect(),
                });
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<(), CodegenError> {
        if !is_identifier(&self.opaque_type_name) {
            return Err(CodegenError::Invalid(format!(
                "opaque type name {:?} is not an identifier",
                self.opaque_type_name
            )));
        }
        if !is_identifier(&self.map.package_alias) {
            return Err(CodegenError::Invalid("package alias is not an identifier".into()));
        }
        let mut image: BTreeSet<&str> = self.map.obfuscated_leaves_ref();
        for ns in self.map.namespace_map.values() {
            image.extend(ns.split('.'));
        }
        if image.contains(self.opaque_type_name.as_str()) {
            return Err(CodegenError::Invalid(format!(
                "opaque type name {:?} collides with an obfuscated name",
                self.opaque_type_name
            )));
        }
        let mut type_names = BTreeSet::new();
        let mut wrapped = BTreeSet::new();
        for rw in &self.result_wrappers {
            if self.map.get(&rw.function).is_none() {
                return Err(CodegenError::UnknownFunction(rw.function.dotted()));
            }
            if !wrapped.insert(&rw.function) {
                return Err(CodegenError::Invalid(format!(
                    "function {} has two result wrappers",
                    rw.function
                )));
            }
            if !is_identifier(&rw.type_name)
                || rw.type_name == self.opaque_type_name
                || !type_names.insert(rw.type_name.as_str())
            {
                return Err(CodegenError::Invalid(format!(
                    "bad result type name {:?}",
                    rw.type_name
                )));
            }
            let distinct: BTreeSet<&String> = rw.fields.iter().collect();
            if rw.fields.is_empty()
                || distinct.len() != rw.fields.len()
                || !rw.fields.iter().all(|f| is_identifier(f))
            {
                return Err(CodegenError::Invalid(format!(
                    "bad fields for result type {}",
                    rw.type_name
                )));
            }
        }
        Ok(())
    }
}

impl ObfuscationMap {
    fn obfuscated_leaves_ref(&self) -> BTreeSet<&str> {
        self.name_map.values().map(|v| v.leaf.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub source_package: String,
    pub opaque_type: String,
    /// Dotted module path to its exported names, sorted.
    pub exports: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedPackage {
    /// Relative path and file contents, in emission order.
    pub files: Vec<(String, String)>,
    pub manifest: Manifest,
}

impl EmittedPackage {
    pub fn file(&self, path: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(p, _)| p == path)
            .map(|(_, s)| s.as_str())
    }

    pub fn python_files(&self) -> impl Iterator<Item = (&str, &str)> {
        self.files
            .iter()
            .filter(|(p, _)| p.ends_with(".py"))
            .map(|(p, s)| (p.as_str(), s.as_str()))
    }

    /// Parses every emitted Python file.
    pub fn parse_check(&self) -> Result<(), CodegenError> {
        for (path, src) in self.python_files() {
            python::parse_module(src, path).map_err(|source| CodegenError::Parse {
                path: path.to_string(),
                source,
            })?;
        }
        Ok(())
    }

    /// Writes all files below `dir`, creating directories as needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), CodegenError> {
        for (rel, contents) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, contents)?;
        }
        Ok(())
    }
}

fn module_path(alias: &str, ns: &[String]) -> String {
    std::iter::once(alias)
        .chain(ns.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(".")
}

fn file_path(alias: &str, ns: &[String], file: &str) -> String {
    let mut parts: Vec<&str> = vec![alias];
    parts.extend(ns.iter().map(String::as_str));
    parts.push(file);
    parts.join("/")
}

fn py_list(names: &[String]) -> String {
    if names.is_empty() {
        return "[]".into();
    }
    let mut out = String::from("[\n");
    for n in names {
        let _ = writeln!(out, "    {},", py_str(n));
    }
    out.push(']');
    out
}

fn runtime_source(spec: &WrapperSpec) -> String {
    let ty = &spec.opaque_type_name;
    let source = &spec.map.source_package;
    let mut s = String::from(HEADER);
    let _ = write!(
        s,
        r#""""Runtime support for the {alias} package."""
import {source} as _source

_SCALAR_UNWRAP = {scalar}
_ndarray = _source.ndarray
_generic = _source.generic


class {ty}:
    __slots__ = ("_data",)

    def __init__(self, data):
        object.__setattr__(self, "_data", _source.asarray(_unwrap(data)))

    def __getitem__(self, key):
        return _wrap(self._data[_unwrap(key)])

    def __len__(self):
        return len(self._data)

    def __iter__(self):
        for item in self._data:
            yield _wrap(item)

    def __repr__(self):
        return "{ty}(" + repr(self._data.tolist()) + ")"

    def __str__(self):
        return str(self._data.tolist())

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __eq__(self, other):
        return _wrap(self._data == _unwrap(other))

    def __ne__(self, other):
        return _wrap(self._data != _unwrap(other))

    __hash__ = None

    def __setattr__(self, name, value):
        raise AttributeError("{ty} is read-only")

    def __getattr__(self, name):
        raise AttributeError("{ty} has no attribute " + repr(name))


def _unwrap(value):
    if isinstance(value, {ty}):
        return value._data
    if isinstance(value, list):
        return [_unwrap(v) for v in value]
    if isinstance(value, tuple):
        return tuple(_unwrap(v) for v in value)
    if isinstance(value, dict):
        return {{k: _unwrap(v) for k, v in value.items()}}
    return value


def _wrap(value):
    if isinstance(value, _ndarray):
        if value.ndim == 0 and _SCALAR_UNWRAP:
            return value.item()
        return {ty}(value)
    if isinstance(value, _generic):
        return value.item() if _SCALAR_UNWRAP else {ty}(value)
    if isinstance(value, tuple):
        return tuple(_wrap(v) for v in value)
    if isinstance(value, list):
        return [_wrap(v) for v in value]
    if callable(value) and not isinstance(value, type):
        return _delegate(value)
    return value


def _delegate(function):
    def _delegated(*args, **kwargs):
        return _call(function, args, kwargs)

    return _delegated


def _call(function, args, kwargs):
    args = [_unwrap(a) for a in args]
    kwargs = {{k: _unwrap(v) for k, v in kwargs.items()}}
    return _wrap(function(*args, **kwargs))


def _call_structured(function, result_type, args, kwargs):
    args = [_unwrap(a) for a in args]
    kwargs = {{k: _unwrap(v) for k, v in kwargs.items()}}
    result = function(*args, **kwargs)
    fields = result_type.__slots__
    if all(hasattr(result, f) for f in fields):
        return result_type(*[_wrap(getattr(result, f)) for f in fields])
    return _wrap(result)
"#,
        alias = spec.map.package_alias,
        scalar = if spec.scalar_unwrap { "True" } else { "False" },
    );
    for rw in &spec.result_wrappers {
        let slots: Vec<String> = rw.fields.iter().map(|f| py_str(f)).collect();
        let slots = if slots.len() == 1 {
            format!("({},)", slots[0])
        } else {
            format!("({})", slots.join(", "))
        };
        let _ = write!(
            s,
            r#"

class {name}:
    __slots__ = {slots}

    def __init__(self, *values):
        for field, value in zip(self.__slots__, values):
            object.__setattr__(self, field, value)

    def __iter__(self):
        return iter(tuple(getattr(self, f) for f in self.__slots__))

    def __len__(self):
        return len(self.__slots__)

    def __getitem__(self, index):
        return tuple(getattr(self, f) for f in self.__slots__)[index]

    def __repr__(self):
        parts = [f + "=" + repr(getattr(self, f)) for f in self.__slots__]
        return "{name}(" + ", ".join(parts) + ")"
"#,
            name = rw.type_name,
        );
    }
    s
}

struct ModuleFunctions<'a> {
    entries: Vec<(&'a QualifiedName, &'a QualifiedName)>,
}

fn module_source(
    spec: &WrapperSpec,
    ns: &[String],
    funcs: &ModuleFunctions<'_>,
    children: &[String],
) -> (String, Vec<String>) {
    let alias = &spec.map.package_alias;
    let source = &spec.map.source_package;
    let is_root = ns.is_empty();
    let dots = ".".repeat(ns.len() + 1);
    let wrappers: BTreeMap<&QualifiedName, &ResultWrapper> = spec
        .result_wrappers
        .iter()
        .map(|rw| (&rw.function, rw))
        .collect();

    let mut s = String::from(HEADER);
    let _ = writeln!(s, "\"\"\"{}: generated module.\"\"\"", module_path(alias, ns));
    let _ = writeln!(s, "from {dots} import _runtime as _rt");
    for child in children {
        let _ = writeln!(s, "from . import {child}");
    }
    if is_root {
        let _ = writeln!(s, "\n{ty} = _rt.{ty}", ty = spec.opaque_type_name);
    }

    if !funcs.entries.is_empty() {
        s.push('\n');
        for (orig, obf) in &funcs.entries {
            let mut target = String::from("_rt._source");
            for seg in &orig.namespace {
                target.push('.');
                target.push_str(seg);
            }
            let _ = writeln!(s, "_{} = {target}.{}", obf.leaf, orig.leaf);
        }
    }

    for (orig, obf) in &funcs.entries {
        let body = match wrappers.get(orig) {
            Some(rw) => format!(
                "_rt._call_structured(_{}, _rt.{}, args, kwargs)",
                obf.leaf, rw.type_name
            ),
            None => format!("_rt._call(_{}, args, kwargs)", obf.leaf),
        };
        let _ = write!(
            s,
            "\n\ndef {name}(*args, **kwargs):\n    return {body}\n",
            name = obf.leaf
        );
    }

    let mut exports: Vec<String> = funcs.entries.iter().map(|(_, o)| o.leaf.clone()).collect();
    exports.extend(children.iter().cloned());
    if is_root {
        exports.push(spec.opaque_type_name.clone());
    }
    exports.sort();
    let _ = write!(s, "\n\n__all__ = {}\n", py_list(&exports));
    let _ = source;
    (s, exports)
}

/// Emits the wrapper package described by `spec`.
pub fn emit_package(spec: &WrapperSpec) -> Result<EmittedPackage, CodegenError> {
    spec.validate()?;
    let alias = &spec.map.package_alias;

    // Obfuscated namespace path -> entries, and parent -> children.
    let mut by_ns: BTreeMap<Vec<String>, ModuleFunctions<'_>> = BTreeMap::new();
    for ns in spec.map.obfuscated_namespaces() {
        by_ns.insert(ns, ModuleFunctions { entries: Vec::new() });
    }
    for (orig, obf) in &spec.map.name_map {
        by_ns
            .entry(obf.namespace.clone())
            .or_insert_with(|| ModuleFunctions { entries: Vec::new() })
            .entries
            .push((orig, obf));
    }
    for funcs in by_ns.values_mut() {
        funcs.entries.sort_by(|a, b| a.1.leaf.cmp(&b.1.leaf));
    }
    let mut children: BTreeMap<Vec<String>, Vec<String>> = BTreeMap::new();
    for ns in by_ns.keys() {
        if let Some((last, parent)) = ns.split_last() {
            children.entry(parent.to_vec()).or_default().push(last.clone());
        }
    }

    let mut files = vec![(file_path(alias, &[], "_runtime.py"), runtime_source(spec))];
    let mut exports = BTreeMap::new();
    for (ns, funcs) in &by_ns {
        let kids = children.get(ns).cloned().unwrap_or_default();
        let (src, names) = module_source(spec, ns, funcs, &kids);
        files.push((file_path(alias, ns, "__init__.py"), src));
        exports.insert(module_path(alias, ns), names);
    }
    let manifest = Manifest {
        package: alias.clone(),
        source_package: spec.map.source_package.clone(),
        opaque_type: spec.opaque_type_name.clone(),
        exports,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    files.push((file_path(alias, &[], "MANIFEST.json"), manifest_json));
    Ok(EmittedPackage { files, manifest })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum ContractViolation {
    MissingOpaqueType(String),
    MissingProtocolMember(String),
    ForbiddenMember(String),
}

impl std::fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MissingOpaqueType(n) => write!(f, "missing opaque type: {n}"),
            Self::MissingProtocolMember(n) => write!(f, "missing protocol member: {n}"),
            Self::ForbiddenMember(n) => write!(f, "forbidden member: {n}"),
        }
    }
}

fn class_members(body: &[ast::Stmt]) -> Vec<String> {
    let mut out = Vec::new();
    for stmt in body {
        match stmt {
            ast::Stmt::FunctionDef(d) => out.push(d.name.to_string()),
            ast::Stmt::AsyncFunctionDef(d) => out.push(d.name.to_string()),
            ast::Stmt::ClassDef(d) => out.push(d.name.to_string()),
            ast::Stmt::Assign(a) => {
                for t in &a.targets {
                    if let ast::Expr::Name(n) = t {
                        out.push(n.id.to_string());
                    }
                }
            }
            ast::Stmt::AnnAssign(a) => {
                if let ast::Expr::Name(n) = a.target.as_ref() {
                    out.push(n.id.to_string());
                }
            }
            _ => {}
        }
    }
    out
}

/// Statically checks that the emitted opaque type exposes exactly the
/// allowed protocol: every required member present, nothing outside the
/// required and permitted sets.
pub fn opaque_contract_check(
    package: &EmittedPackage,
) -> Result<Vec<ContractViolation>, CodegenError> {
    let opaque = &package.manifest.opaque_type;
    let mut found: Option<Vec<String>> = None;
    for (path, src) in package.python_files() {
        let module = python::parse_module(src, path).map_err(|source| CodegenError::Parse {
            path: path.to_string(),
            source,
        })?;
        for stmt in &module.body {
            if let ast::Stmt::ClassDef(c) = stmt {
                if c.name.as_str() == opaque {
                    found = Some(class_members(&c.body));
                }
            }
        }
    }
    let Some(members) = found else {
        return Ok(vec![ContractViolation::MissingOpaqueType(opaque.clone())]);
    };
    let mut violations = Vec::new();
    for req in REQUIRED_MEMBERS {
        if !members.iter().any(|m| m == req) {
            violations.push(ContractViolation::MissingProtocolMember(req.to_string()));
        }
    }
    let mut seen = BTreeSet::new();
    for m in &members {
        let allowed = REQUIRED_MEMBERS.contains(&m.as_str()) || PERMITTED_MEMBERS.contains(&m.as_str());
        if !allowed && seen.insert(m.clone()) {
            violations.push(ContractViolation::ForbiddenMember(m.clone()));
        }
    }
    Ok(violations)
}

/// Names whose export set disagrees with the map image: `(module, name)`
/// pairs that are missing or unexpected.
pub fn export_mismatches(
    package: &EmittedPackage,
    map: &ObfuscationMap,
) -> Vec<(String, String)> {
    let alias = &map.package_alias;
    let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for ns in map.obfuscated_namespaces() {
        expected.entry(module_path(alias, &ns)).or_default();
        if let Some((last, parent)) = ns.split_last() {
            expected
                .entry(module_path(alias, parent))
                .or_default()
                .insert(last.clone());
        }
    }
    expected
        .entry(alias.clone())
        .or_default()
        .insert(package.manifest.opaque_type.clone());
    for obf in map.name_map.values() {
        expected
            .entry(module_path(alias, &obf.namespace))
            .or_default()
            .insert(obf.leaf.clone());
    }
    let mut out = Vec::new();
    let modules: BTreeSet<&String> = expected.keys().chain(package.manifest.exports.keys()).collect();
    for module in modules {
        let want = expected.get(module).cloned().unwrap_or_default();
        let have: BTreeSet<String> = package
            .manifest
            .exports
            .get(module)
            .map(|v| v.iter().cloned().collect())
            .unwrap_or_default();
        for n in want.symmetric_difference(&have) {
            out.push((module.clone(), n.clone()));
        }
    }
    out
}
