//! Verdicts, failure taxonomy, prompts and metrics.

mod metrics;
mod prompt;

use std::collections::BTreeSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::codegen::WrapperSpec;
use crate::sandbox::SandboxResult;
use crate::tasks::TaskRecord;
use crate::verify::{Reliance, StaticReport};

pub use metrics::{aggregate, pass_at_k, ConditionFailures, MetricReport, SplitMetrics};
pub use prompt::{
    assemble_prompt, example_test_cases, package_leaks, ref_code, standard_prompt, Mode, Phase, PromptSpec,
    Templates, TEMPLATE_PACKAGE,
};

#[derive(Debug, thiserror::Error)]
pub enum GradeError {
    #[error("missing evidence: {0}")]
    MissingEvidence(&'static str),
    #[error("no documentation entry for {0}")]
    MissingDoc(String),
    #[error("prompt: {0}")]
    Prompt(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("duplicate verdict for task {task} rollout {rollout}")]
    Duplicate { task: String, rollout: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    AttributeHallucination,
    FunctionHallucination,
    ParameterMisalignment,
    ReturnMisinterpretation,
    NativeIncompatibility,
    Other,
    None,
}

impl ErrorCategory {
    pub const FAILURES: [ErrorCategory; 6] = [
        Self::AttributeHallucination,
        Self::FunctionHallucination,
        Self::ParameterMisalignment,
        Self::ReturnMisinterpretation,
        Self::NativeIncompatibility,
        Self::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AttributeHallucination => "attribute_hallucination",
            Self::FunctionHallucination => "function_hallucination",
            Self::ParameterMisalignment => "parameter_misalignment",
            Self::ReturnMisinterpretation => "return_misinterpretation",
            Self::NativeIncompatibility => "native_incompatibility",
            Self::Other => "other",
            Self::None => "none",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Names the classifier needs to recognise in error text.
#[derive(Debug, Clone)]
pub struct Classifier {
    alias: String,
    opaque: Regex,
    opaque_attr: Regex,
    module_attr: Regex,
    arity: Regex,
    result_attr: Option<Regex>,
    unpack: Regex,
    callables: BTreeSet<String>,
    /// Treat package members the verifier did not recognise as
    /// `function_hallucination` when no runtime rule fires.
    pub static_hallucination: bool,
}

const Q: &str = r#"['"`]"#;

impl Classifier {
    pub fn new(
        alias: &str,
        opaque_type: &str,
        callables: impl IntoIterator<Item = String>,
        result_types: impl IntoIterator<Item = String>,
    ) -> Self {
        let a = regex::escape(alias);
        let o = regex::escape(opaque_type);
        let results: Vec<String> = result_types.into_iter().map(|r| regex::escape(&r)).collect();
        Self {
            alias: alias.to_string(),
            opaque: Regex::new(&format!(r"{Q}{o}{Q}|\b{o}\b")).expect("pattern"),
            opaque_attr: Regex::new(&format!(r"(?:{Q}{o}{Q}|\b{o}\b)(?: object)? has no attribute")).expect("pattern"),
            module_attr: Regex::new(&format!(
                r"module {Q}{a}(?:\.[\w.]+)?{Q} has no attribute|cannot import name {Q}?\w+{Q}? from {Q}{a}(?:\.[\w.]+)?{Q}|No module named {Q}{a}\."
            ))
            .expect("pattern"),
            arity: Regex::new(
                r"\b(\w+)\(\) (?:takes|missing|got an unexpected keyword|got multiple values|takes no|requires)",
            )
            .expect("pattern"),
            result_attr: (!results.is_empty()).then(|| {
                Regex::new(&format!(r"{Q}?\b(?:{})\b{Q}?(?: object)? has no attribute", results.join("|")))
                    .expect("pattern")
            }),
            unpack: Regex::new(r"(?:not enough|too many) values to unpack").expect("pattern"),
            callables: callables.into_iter().collect(),
            static_hallucination: false,
        }
    }

    /// Classifier for a wrapper: every mapped name on both sides counts as a
    /// package callable, and every generated result class as a result type.
    pub fn for_wrapper(spec: &WrapperSpec) -> Self {
        let callables = spec
            .map
            .name_map
            .iter()
            .flat_map(|(o, n)| [o.leaf.clone(), n.leaf.clone()]);
        let results = spec.result_wrappers.iter().map(|r| r.type_name.clone());
        Self::new(&spec.map.package_alias, &spec.opaque_type_name, callables, results)
    }

    fn arity_names_callable(&self, text: &str) -> bool {
        self.arity.captures_iter(text).any(|c| {
            let name = &c[1];
            let name = name
                .strip_prefix('_')
                .and_then(|n| n.strip_suffix("_dispatcher"))
                .unwrap_or(name);
            self.callables.contains(name)
        })
    }

    fn rule(&self, text: &str) -> Option<ErrorCategory> {
        if self.opaque_attr.is_match(text) {
            return Some(ErrorCategory::AttributeHallucination);
        }
        if self.module_attr.is_match(text) {
            return Some(ErrorCategory::FunctionHallucination);
        }
        if self.arity_names_callable(text) {
            return Some(ErrorCategory::ParameterMisalignment);
        }
        if self.result_attr.as_ref().is_some_and(|r| r.is_match(text)) || self.unpack.is_match(text) {
            return Some(ErrorCategory::ReturnMisinterpretation);
        }
        if self.opaque.is_match(text) {
            return Some(ErrorCategory::NativeIncompatibility);
        }
        None
    }

    /// Category of the highest-priority rule any text triggers.
    pub fn classify_texts<'t>(&self, texts: impl IntoIterator<Item = &'t str>) -> ErrorCategory {
        texts
            .into_iter()
            .filter_map(|t| self.rule(t))
            .min()
            .unwrap_or(ErrorCategory::Other)
    }

    pub fn classify(&self, report: &StaticReport, result: &SandboxResult) -> ErrorCategory {
        let c = self.classify_texts(result.error_texts());
        if c == ErrorCategory::Other
            && self.static_hallucination
            && report
                .unknown_package_members
                .iter()
                .any(|m| m.split('.').next() == Some(self.alias.as_str()))
        {
            return ErrorCategory::FunctionHallucination;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub rollout_index: u32,
    #[serde(rename = "R")]
    pub r: u8,
    pub cond_tests: bool,
    pub cond_reliance: bool,
    pub cond_no_forbidden: bool,
    pub error_category: ErrorCategory,
    pub static_report: StaticReport,
    pub sandbox_result: SandboxResult,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.r == 1
    }
}

/// Success is the conjunction of the three conditions.
pub fn compose(cond_tests: bool, cond_reliance: bool, cond_no_forbidden: bool) -> u8 {
    u8::from(cond_tests && cond_reliance && cond_no_forbidden)
}

pub fn grade(
    task: &TaskRecord,
    rollout_index: u32,
    static_report: Option<&StaticReport>,
    sandbox_result: Option<&SandboxResult>,
    classifier: &Classifier,
) -> Result<Verdict, GradeError> {
    let report = static_report.ok_or(GradeError::MissingEvidence("static report"))?;
    let result = sandbox_result.ok_or(GradeError::MissingEvidence("sandbox result"))?;
    let cond_tests = report.parse_ok && result.all_passed(task.test_cases.len());
    let cond_reliance = report.reliance == Reliance::Reliant;
    let cond_no_forbidden = report.forbidden_imports.is_empty() && result.denials.is_empty();
    let r = compose(cond_tests, cond_reliance, cond_no_forbidden);
    let error_category = if r == 1 {
        ErrorCategory::None
    } else {
        classifier.classify(report, result)
    };
    Ok(Verdict {
        task_id: task.id.clone(),
        rollout_index,
        r,
        cond_tests,
        cond_reliance,
        cond_no_forbidden,
        error_category,
        static_report: report.clone(),
        sandbox_result: result.clone(),
    })
}
