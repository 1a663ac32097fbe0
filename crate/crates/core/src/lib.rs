//! Toolkit for building and grading an obfuscated-library coding benchmark.
//!
//! A subject library (the reference profile is NumPy) is renamed into a
//! pseudo-novel package with seeded, semantically void identifiers. The
//! crate emits the wrapper package, translates documentation, generates and
//! filters coding tasks, and grades solutions under a three-condition rule:
//! all tests pass, the returned value flows from calls into the obfuscated
//! package, and the source library is never imported.
//!
//! Module map:
//!
//! - [`surface`] / [`naming`]: API surface and the seeded obfuscation map.
//! - [`codegen`]: the emitted wrapper package and its opaque array type.
//! - [`docs`]: documentation substitution and optional model rewrite.
//! - [`tasks`] / [`corpus`]: task records, generation, consensus filtering,
//!   splits and persistence.
//! - [`verify`]: import scanning and return-value reliance analysis.
//! - [`sandbox`]: wire protocol and process pool for the execution runner.
//! - [`grade`]: verdicts, prompts, pass@k, error taxonomy and reports.

pub mod codegen;
pub mod corpus;
pub mod docs;
pub mod grade;
pub mod llm;
pub mod naming;
pub mod python;
pub mod rng;
pub mod sandbox;
pub mod surface;
pub mod tasks;
pub mod verify;

pub use naming::{build_map, map_violations, MapOptions, ObfuscationMap, PseudowordPolicy};
pub use surface::{ApiSurface, QualifiedName};
