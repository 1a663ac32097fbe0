//! Prompt assembly for the closed, open and standard settings.

use std::path::Path;
use std::{fs, io};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GradeError;
use crate::docs::{tokens, DocBundle};
use crate::python::py_literal;
use crate::tasks::TaskRecord;

const CLOSED_TEMPLATE: &str = include_str!("../../assets/prompt_closed.txt");
const OPEN_TEMPLATE: &str = include_str!("../../assets/prompt_open.txt");

/// Package name the shipped templates are written against.
pub const TEMPLATE_PACKAGE: &str = "zwc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Test,
    /// Evaluation with documentation in context, without training.
    InContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub phase: Phase,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub closed: String,
    pub open: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            closed: CLOSED_TEMPLATE.to_string(),
            open: OPEN_TEMPLATE.to_string(),
        }
    }
}

impl Templates {
    /// Reads `prompt_closed.txt` and `prompt_open.txt` from `dir`.
    pub fn load(dir: &Path) -> io::Result<Self> {
        Ok(Self {
            closed: fs::read_to_string(dir.join("prompt_closed.txt"))?,
            open: fs::read_to_string(dir.join("prompt_open.txt"))?,
        })
    }

    /// Templates naming `package` wherever the shipped ones name the
    /// obfuscated package.
    pub fn for_package(&self, package: &str) -> Self {
        if package == TEMPLATE_PACKAGE {
            return self.clone();
        }
        let re = Regex::new(&format!(r"\b{TEMPLATE_PACKAGE}\b")).expect("static pattern");
        Self {
            closed: re.replace_all(&self.closed, regex::NoExpand(package)).into_owned(),
            open: re.replace_all(&self.open, regex::NoExpand(package)).into_owned(),
        }
    }
}

/// One `Input: ... Output: ...` line per test case.
pub fn example_test_cases(task: &TaskRecord) -> String {
    task.test_cases
        .iter()
        .map(|c| format!("Input: {}. Output: {}.", c.render_inputs(), py_literal(&c.expected)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Documentation for the task's targets, in `doc_keys` order.
pub fn ref_code(task: &TaskRecord, docs: &DocBundle, package: &str) -> Result<String, GradeError> {
    let mut blocks = Vec::with_capacity(task.doc_keys.len());
    for key in &task.doc_keys {
        let entry = docs.get(key).ok_or_else(|| GradeError::MissingDoc(key.clone()))?;
        let prefix = match key.rsplit_once('.') {
            Some((ns, _)) => format!("{package}.{ns}."),
            None => format!("{package}."),
        };
        let header = if entry.signature.is_empty() {
            format!("{package}.{key}(...)")
        } else {
            format!("{prefix}{}", entry.signature)
        };
        let body: Vec<String> = entry
            .doc
            .lines()
            .map(|l| if l.is_empty() { String::new() } else { format!("    {l}") })
            .collect();
        blocks.push(format!("{header}\n{}", body.join("\n")));
    }
    Ok(blocks.join("\n\n"))
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    'outer: while let Some(pos) = rest.find("${") {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in slots {
            let slot = format!("${{{name}}}");
            if tail.starts_with(&slot) {
                out.push_str(value);
                rest = &tail[slot.len()..];
                continue 'outer;
            }
        }
        out.push_str("${");
        rest = &tail[2..];
    }
    out.push_str(rest);
    out
}

/// Prompt for `task` against the obfuscated package.
pub fn assemble_prompt(
    task: &TaskRecord,
    spec: PromptSpec,
    templates: &Templates,
    package: &str,
    docs: Option<&DocBundle>,
) -> Result<String, GradeError> {
    let tpl = templates.for_package(package);
    let examples = example_test_cases(task);
    let function = task.stub.render();
    let function = function.trim_end();
    match spec.mode {
        Mode::Closed => {
            if docs.is_some() {
                return Err(GradeError::Prompt("closed mode takes no documentation".into()));
            }
            Ok(fill(
                &tpl.closed,
                &[("question", &task.question), ("example_test_cases", &examples), ("function", function)],
            ))
        }
        Mode::Open => {
            if spec.phase == Phase::Test {
                return Err(GradeError::Prompt("test-phase prompts carry no documentation".into()));
            }
            let docs = docs.ok_or_else(|| GradeError::Prompt("open mode needs a documentation bundle".into()))?;
            let refs = ref_code(task, docs, package)?;
            Ok(fill(
                &tpl.open,
                &[
                    ("ref_code", &refs),
                    ("question", &task.question),
                    ("example_test_cases", &examples),
                    ("function", function),
                ],
            ))
        }
    }
}

/// Closed-template prompt naming the source library instead.
pub fn standard_prompt(task: &TaskRecord, templates: &Templates, source_package: &str) -> String {
    let spec = PromptSpec {
        phase: Phase::Test,
        mode: Mode::Closed,
    };
    assemble_prompt(task, spec, templates, source_package, None).expect("closed prompts never fail")
}

/// Tokens of `prompt` spelling the source package or one of its aliases.
pub fn package_leaks(prompt: &str, source_package: &str, aliases: &[&str]) -> Vec<String> {
    let lower = source_package.to_lowercase();
    let mut out: Vec<String> = tokens(prompt)
        .into_iter()
        .filter(|t| t.to_lowercase() == lower || aliases.contains(t))
        .map(str::to_string)
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docs::{DocEntry, Provenance};
    use crate::tasks::tests::bitwise_and_task;

    fn docs() -> DocBundle {
        DocBundle {
            entries: vec![
                DocEntry {
                    name: "lenelo".into(),
                    signature: "lenelo(x1, x2, /)".into(),
                    doc: "Compute the bit-wise AND of two arrays element-wise.\n\nParameters".into(),
                    provenance: Provenance::Substitution,
                },
                DocEntry {
                    name: "qubime".into(),
                    signature: "qubime(x)".into(),
                    doc: "Hyperbolic cosine, element-wise.".into(),
                    provenance: Provenance::Substitution,
                },
            ],
        }
    }

    fn task() -> TaskRecord {
        let mut t = bitwise_and_task();
        t.doc_keys = vec!["lenelo".into()];
        t
    }

    #[test]
    fn shipped_templates_keep_their_markers() {
        let t = Templates::default();
        assert!(t.open.contains("### zwc Codebase Functions\n${ref_code}\n"));
        assert!(!t.closed.contains("Codebase Functions"));
        assert!(t.open.contains("input--output data structure"));
        assert!(t.closed.contains("strictly by using the zwc library. Direct"));
        let np = t.for_package("numpy");
        assert!(np.closed.contains("strictly by using the numpy library"));
        assert!(!np.closed.contains("zwc"));
    }

    #[test]
    fn closed_prompt_carries_no_docs() {
        let spec = PromptSpec {
            phase: Phase::Train,
            mode: Mode::Closed,
        };
        let p = assemble_prompt(&task(), spec, &Templates::default(), "zwc", None).unwrap();
        assert!(!p.contains("bit-wise AND"));
        assert!(p.contains("Input: x1=[255, 170, 85], x2=[15, 240, 51]. Output: [15, 160, 17].\n"));
        assert!(p.contains("### Function to Complete\ndef compute_overlap(x1, x2):\n    pass\n\n### Requirements"));
        assert!(!p.contains("${"));
        assert!(package_leaks(&p, "numpy", &["np"]).is_empty());
        assert!(assemble_prompt(&task(), spec, &Templates::default(), "zwc", Some(&docs())).is_err());
    }

    #[test]
    fn open_prompt_injects_only_target_docs() {
        let spec = PromptSpec {
            phase: Phase::Train,
            mode: Mode::Open,
        };
        let a = assemble_prompt(&task(), spec, &Templates::default(), "zwc", Some(&docs())).unwrap();
        let b = assemble_prompt(&task(), spec, &Templates::default(), "zwc", Some(&docs())).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("### zwc Codebase Functions\nzwc.lenelo(x1, x2, /)\n    Compute the bit-wise AND"));
        assert!(!a.contains("Hyperbolic"));

        let test = PromptSpec {
            phase: Phase::Test,
            mode: Mode::Open,
        };
        assert!(assemble_prompt(&task(), test, &Templates::default(), "zwc", Some(&docs())).is_err());
        let mut missing = task();
        missing.doc_keys = vec!["nosuch".into()];
        assert!(matches!(
            assemble_prompt(&missing, spec, &Templates::default(), "zwc", Some(&docs())),
            Err(GradeError::MissingDoc(_))
        ));
    }

    #[test]
    fn standard_prompt_names_the_source_library() {
        let p = standard_prompt(&task(), &Templates::default(), "numpy");
        assert!(p.contains("ensuring that the numpy functions are explicitly used"));
        assert!(!p.contains("zwc"));
    }

    #[test]
    fn slot_values_are_not_rescanned() {
        assert_eq!(fill("a ${x} b ${y}", &[("x", "${y}"), ("y", "Y")]), "a ${y} b Y");
        assert_eq!(fill("${nope}", &[("x", "1")]), "${nope}");
    }
}
