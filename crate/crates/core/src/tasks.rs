//! Task records, their validation, and model-driven generation over the
//! original library.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{ChatEndpoint, ChatMessage, TransportError};
use crate::naming::ObfuscationMap;
use crate::python::{extract_fenced_block, py_literal};
use crate::rng::SeededRng;
use crate::surface::{is_identifier, ApiSurface, QualifiedName};

pub const MIN_TEST_CASES: usize = 8;
pub const SAMPLE_SIZE: usize = 10;
pub const MIN_COMPOSE: usize = 3;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid generation config: {0}")]
    Config(String),
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Single,
    Multi,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stub {
    pub name: String,
    pub params: Vec<String>,
}

impl Stub {
    /// `def name(a, b):` header with a `pass` body.
    pub fn render(&self) -> String {
        format!("def {}({}):\n    pass\n", self.name, self.params.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub inputs: IndexMap<String, Value>,
    pub expected: Value,
}

impl TestCase {
    /// `x1=[255, 170, 85], x2=[15, 240, 51]`
    pub fn render_inputs(&self) -> String {
        self.inputs
            .iter()
            .map(|(k, v)| format!("{k}={}", py_literal(v)))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub category: Category,
    pub target_functions: Vec<QualifiedName>,
    /// Functions offered to the generator for a multi task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample: Vec<QualifiedName>,
    pub question: String,
    pub stub: Stub,
    pub test_cases: Vec<TestCase>,
    #[serde(default)]
    pub doc_keys: Vec<String>,
}

/// Content hash of (category, targets, question): 16 hex digits.
pub fn task_id(category: Category, targets: &[QualifiedName], question: &str) -> String {
    let mut h = Sha256::new();
    h.update(category.to_string().as_bytes());
    h.update([0]);
    let names: Vec<String> = targets.iter().map(QualifiedName::dotted).collect();
    h.update(names.join(",").as_bytes());
    h.update([0]);
    h.update(question.as_bytes());
    hex::encode(&h.finalize()[..8])
}

impl TaskRecord {
    pub fn new(
        category: Category,
        target_functions: Vec<QualifiedName>,
        question: impl Into<String>,
        stub: Stub,
        test_cases: Vec<TestCase>,
    ) -> Self {
        let question = question.into();
        Self {
            id: task_id(category, &target_functions, &question),
            category,
            target_functions,
            sample: Vec::new(),
            question,
            stub,
            test_cases,
            doc_keys: Vec::new(),
        }
    }

    /// Fills `doc_keys` with the obfuscated names of the targets.
    pub fn with_doc_keys(mut self, map: &ObfuscationMap) -> Self {
        self.doc_keys = self
            .target_functions
            .iter()
            .filter_map(|t| map.get(t).map(QualifiedName::dotted))
            .collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    TestCaseCount,
    TargetCount,
    DuplicateTargets,
    MinCompose,
    MaxCompose,
    SampleSize,
    TargetsOutsideSample,
    StubName,
    StubParams,
    InputKeysMismatch,
    ValueKind,
    EmptyQuestion,
    IdMismatch,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Self::TestCaseCount => "test_case_count",
            Self::TargetCount => "target_count",
            Self::DuplicateTargets => "duplicate_targets",
            Self::MinCompose => "min_compose",
            Self::MaxCompose => "max_compose",
            Self::SampleSize => "sample_size",
            Self::TargetsOutsideSample => "targets_outside_sample",
            Self::StubName => "stub_name",
            Self::StubParams => "stub_params",
            Self::InputKeysMismatch => "input_keys_mismatch",
            Self::ValueKind => "value_kind",
            Self::EmptyQuestion => "empty_question",
            Self::IdMismatch => "id_mismatch",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Lists and scalars only, at any depth.
fn list_or_scalar(v: &Value) -> bool {
    match v {
        Value::Object(_) => false,
        Value::Array(items) => items.iter().all(list_or_scalar),
        _ => true,
    }
}

/// Every violated invariant, in a fixed order. Empty means valid.
pub fn validate_task(task: &TaskRecord) -> Vec<Violation> {
    let mut v = Vec::new();
    if task.test_cases.len() < MIN_TEST_CASES {
        v.push(Violation::TestCaseCount);
    }
    let distinct: BTreeSet<&QualifiedName> = task.target_functions.iter().collect();
    if distinct.len() != task.target_functions.len() {
        v.push(Violation::DuplicateTargets);
    }
    match task.category {
        Category::Single => {
            if task.target_functions.len() != 1 {
                v.push(Violation::TargetCount);
            }
        }
        Category::Multi => {
            if distinct.len() < MIN_COMPOSE {
                v.push(Violation::MinCompose);
            }
            if distinct.len() > SAMPLE_SIZE {
                v.push(Violation::MaxCompose);
            }
            if task.sample.len() > SAMPLE_SIZE {
                v.push(Violation::SampleSize);
            }
            if !task.sample.is_empty() && !distinct.iter().all(|t| task.sample.contains(t)) {
                v.push(Violation::TargetsOutsideSample);
            }
        }
    }
    if !is_identifier(&task.stub.name) {
        v.push(Violation::StubName);
    }
    let params: BTreeSet<&String> = task.stub.params.iter().collect();
    if params.len() != task.stub.params.len() || !task.stub.params.iter().all(|p| is_identifier(p)) {
        v.push(Violation::StubParams);
    }
    if task
        .test_cases
        .iter()
        .any(|c| !c.inputs.keys().eq(task.stub.params.iter()))
    {
        v.push(Violation::InputKeysMismatch);
    }
    if task
        .test_cases
        .iter()
        .any(|c| !c.inputs.values().all(list_or_scalar) || !list_or_scalar(&c.expected))
    {
        v.push(Violation::ValueKind);
    }
    if task.question.trim().is_empty() {
        v.push(Violation::EmptyQuestion);
    }
    if task.id != task_id(task.category, &task.target_functions, &task.question) {
        v.push(Violation::IdMismatch);
    }
    v
}

pub fn write_tasks<W: Write>(tasks: &[TaskRecord], mut out: W) -> io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks<R: BufRead>(input: R) -> Result<Vec<TaskRecord>, TaskError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| TaskError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

/// Shape the generator must answer with, inside one fenced JSON block.
#[derive(Debug, Deserialize)]
struct GeneratedTask {
    question: String,
    stub: Stub,
    test_cases: Vec<TestCase>,
    #[serde(default)]
    functions: Vec<String>,
}

const GEN_SYSTEM: &str = "You write self-contained Python coding tasks that exercise a given \
library. Reply with exactly one fenced ```json block holding an object with keys \"question\" \
(problem statement), \"stub\" ({\"name\": function name, \"params\": parameter names}), \
\"test_cases\" (list of {\"inputs\": {param: value}, \"expected\": value}) and \"functions\" \
(the library functions the solution composes, as qualified names). Inputs and outputs must be \
JSON lists or scalars.";

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    pub max_attempts: usize,
    pub max_in_flight: usize,
    pub min_cases: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            max_in_flight: 4,
            min_cases: MIN_TEST_CASES,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerationReport {
    pub tasks: Vec<TaskRecord>,
    /// Functions with no valid single task after all attempts.
    pub uncovered: Vec<QualifiedName>,
    pub rejected: usize,
    pub duplicates: usize,
}

struct Job {
    category: Category,
    targets: Vec<QualifiedName>,
    sample: Vec<QualifiedName>,
    prompt: String,
}

fn single_prompt(surface: &ApiSurface, f: &QualifiedName, variant: usize, of: usize, min_cases: usize) -> String {
    format!(
        "Library: {pkg}\nTarget function: {name}\n\nWrite a realistic programming problem whose \
natural solution calls {name}. Give at least {min_cases} test cases. This is variant {v} of {of}; \
make it differ from the other variants.\nSet \"functions\" to [\"{short}\"].\n",
        pkg = surface.package_name,
        name = f.under(&surface.package_name),
        short = f.dotted(),
        v = variant + 1,
    )
}

fn multi_prompt(surface: &ApiSurface, sample: &[QualifiedName], min_compose: usize, min_cases: usize) -> String {
    let names: Vec<String> = sample.iter().map(|f| f.under(&surface.package_name)).collect();
    format!(
        "Library: {pkg}\nAvailable functions:\n{list}\n\nWrite a realistic programming problem whose \
solution composes at least {min_compose} of the available functions and no others. Give at least \
{min_cases} test cases. List the functions used in \"functions\".\n",
        pkg = surface.package_name,
        list = names.join("\n"),
    )
}

fn parse_reply(
    reply: &str,
    job: &Job,
    surface: &ApiSurface,
    min_cases: usize,
) -> Result<TaskRecord, String> {
    let body = extract_fenced_block(reply, &["json"]).unwrap_or_else(|| reply.trim().to_string());
    let g: GeneratedTask = serde_json::from_str(&body).map_err(|e| format!("invalid JSON: {e}"))?;
    let targets = match job.category {
        Category::Single => job.targets.clone(),
        Category::Multi => {
            let mut out: Vec<QualifiedName> = Vec::new();
            for name in &g.functions {
                let q = surface
                    .resolve(name)
                    .ok_or_else(|| format!("unknown function {name}"))?;
                if !out.contains(&q) {
                    out.push(q);
                }
            }
            out.sort();
            out
        }
    };
    let mut task = TaskRecord::new(job.category, targets, g.question.trim(), g.stub, g.test_cases);
    task.sample = job.sample.clone();
    let violations = validate_task(&task);
    if !violations.is_empty() {
        let codes: Vec<&str> = violations.iter().map(|v| v.code()).collect();
        return Err(format!("violations: {}", codes.join(", ")));
    }
    if task.test_cases.len() < min_cases {
        return Err(format!("fewer than {min_cases} test cases"));
    }
    Ok(task)
}

fn run_job(
    job: &Job,
    surface: &ApiSurface,
    client: &dyn ChatEndpoint,
    opts: &GenerationOptions,
) -> Result<(Option<TaskRecord>, usize), TaskError> {
    let mut messages = vec![ChatMessage::system(GEN_SYSTEM), ChatMessage::user(job.prompt.clone())];
    let mut rejected = 0;
    for _ in 0..opts.max_attempts {
        let reply = client.complete(&messages)?;
        match parse_reply(&reply, job, surface, opts.min_cases) {
            Ok(task) => return Ok((Some(task), rejected)),
            Err(reason) => {
                rejected += 1;
                tracing::debug!(targets = ?job.targets, %reason, "generated task rejected");
                messages.push(ChatMessage {
                    role: "assistant".into(),
                    content: reply,
                });
                messages.push(ChatMessage::user(format!(
                    "That answer was rejected ({reason}). Reply again with one corrected fenced JSON block."
                )));
            }
        }
    }
    Ok((None, rejected))
}

/// Each job with its accepted task, plus the rejection count.
type JobResults = (Vec<(Job, Option<TaskRecord>)>, usize);

fn run_jobs(
    jobs: Vec<Job>,
    surface: &ApiSurface,
    client: &dyn ChatEndpoint,
    opts: &GenerationOptions,
) -> Result<JobResults, TaskError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<(Option<TaskRecord>, usize), TaskError>> =
        pool.install(|| jobs.par_iter().map(|j| run_job(j, surface, client, opts)).collect());
    let mut out = Vec::with_capacity(jobs.len());
    let mut rejected = 0;
    for (job, r) in jobs.into_iter().zip(results) {
        let (task, rej) = r?;
        rejected += rej;
        out.push((job, task));
    }
    Ok((out, rejected))
}

fn dedup(tasks: Vec<TaskRecord>) -> (Vec<TaskRecord>, usize) {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(tasks.len());
    let mut dups = 0;
    for t in tasks {
        if seen.insert(t.id.clone()) {
            out.push(t);
        } else {
            dups += 1;
        }
    }
    (out, dups)
}

/// `per_function` single-target tasks for every surface function.
pub fn generate_single_tasks(
    surface: &ApiSurface,
    client: &dyn ChatEndpoint,
    per_function: usize,
    opts: &GenerationOptions,
) -> Result<GenerationReport, TaskError> {
    if opts.max_attempts == 0 {
        return Err(TaskError::Config("max_attempts must be positive".into()));
    }
    let mut functions = surface.functions.clone();
    functions.sort();
    let jobs: Vec<Job> = functions
        .iter()
        .flat_map(|f| {
            (0..per_function).map(move |k| Job {
                category: Category::Single,
                targets: vec![f.clone()],
                sample: Vec::new(),
                prompt: single_prompt(surface, f, k, per_function, opts.min_cases),
            })
        })
        .collect();
    let (results, rejected) = run_jobs(jobs, surface, client, opts)?;
    let covered: BTreeSet<QualifiedName> = results
        .iter()
        .filter(|(_, t)| t.is_some())
        .flat_map(|(j, _)| j.targets.clone())
        .collect();
    let uncovered = if per_function == 0 {
        Vec::new()
    } else {
        functions.iter().filter(|f| !covered.contains(*f)).cloned().collect()
    };
    let (tasks, duplicates) = dedup(results.into_iter().filter_map(|(_, t)| t).collect());
    Ok(GenerationReport {
        tasks,
        uncovered,
        rejected,
        duplicates,
    })
}

/// `n_tasks` composition tasks, each over its own seeded sample of
/// `sample_size` functions.
pub fn generate_multi_tasks(
    surface: &ApiSurface,
    client: &dyn ChatEndpoint,
    n_tasks: usize,
    seed: u64,
    sample_size: usize,
    min_compose: usize,
    opts: &GenerationOptions,
) -> Result<GenerationReport, TaskError> {
    if sample_size > surface.functions.len() || sample_size > SAMPLE_SIZE {
        return Err(TaskError::Config(format!(
            "sample size {sample_size} exceeds the surface or the {SAMPLE_SIZE}-function limit"
        )));
    }
    if min_compose < MIN_COMPOSE || min_compose > sample_size {
        return Err(TaskError::Config(format!(
            "min_compose {min_compose} must lie in [{MIN_COMPOSE}, {sample_size}]"
        )));
    }
    if opts.max_attempts == 0 {
        return Err(TaskError::Config("max_attempts must be positive".into()));
    }
    let mut functions = surface.functions.clone();
    functions.sort();
    let mut rng = SeededRng::new(seed);
    let jobs: Vec<Job> = (0..n_tasks)
        .map(|_| {
            let mut sample: Vec<QualifiedName> = rng
                .sample_indices(functions.len(), sample_size)
                .into_iter()
                .map(|i| functions[i].clone())
                .collect();
            sample.sort();
            let prompt = multi_prompt(surface, &sample, min_compose, opts.min_cases);
            Job {
                category: Category::Multi,
                targets: Vec::new(),
                sample,
                prompt,
            }
        })
        .collect();
    let (results, rejected) = run_jobs(jobs, surface, client, opts)?;
    let (tasks, duplicates) = dedup(results.into_iter().filter_map(|(_, t)| t).collect());
    Ok(GenerationReport {
        tasks,
        uncovered: Vec::new(),
        rejected,
        duplicates,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn bitwise_and_task() -> TaskRecord {
        let rows = [
            ("[255,170,85]", "[15,240,51]", "[15,160,17]"),
            ("[0, 127, 31]", "[255, 128, 16]", "[0, 0, 16]"),
            ("[1023, 512, 256]", "[511, 768, 384]", "[511, 512, 256]"),
            ("[7, 14, 28, 56]", "[3, 6, 12, 24]", "[3, 6, 12, 24]"),
            ("[65535, 32768, 16384]", "[43690, 21845, 10922]", "[43690, 0, 0]"),
            ("[4095]", "[2730]", "[2730]"),
            ("[255, 255, 255, 255, 255]", "[1, 2, 4, 8, 16]", "[1, 2, 4, 8, 16]"),
            ("[1, 3, 7, 15, 31, 63, 127]", "[128, 64, 32, 16, 8, 4, 2]", "[0, 0, 0, 0, 8, 4, 2]"),
        ];
        let cases = rows
            .iter()
            .map(|(a, b, e)| TestCase {
                inputs: IndexMap::from([
                    ("x1".to_string(), serde_json::from_str(a).unwrap()),
                    ("x2".to_string(), serde_json::from_str(b).unwrap()),
                ]),
                expected: serde_json::from_str(e).unwrap(),
            })
            .collect();
        TaskRecord::new(
            Category::Single,
            vec![QualifiedName::main("bitwise_and")],
            "Given two lists of equal length representing collision masks of sprites from two layers, compute the overlapping collision areas by applying a bitwise AND to each corresponding pair.",
            Stub { name: "compute_overlap".into(), params: vec!["x1".into(), "x2".into()] },
            cases,
        )
    }

    #[test]
    fn published_single_example_is_valid() {
        let t = bitwise_and_task();
        assert!(validate_task(&t).is_empty());
        assert_eq!(t.test_cases[0].render_inputs(), "x1=[255, 170, 85], x2=[15, 240, 51]");
        assert_eq!(t.test_cases[0].expected, json!([15, 160, 17]));
        assert_eq!(t.id.len(), 16);
    }

    #[test]
    fn seven_cases_violate_count() {
        let mut t = bitwise_and_task();
        t.test_cases.pop();
        assert_eq!(validate_task(&t), vec![Violation::TestCaseCount]);
        assert_eq!(Violation::TestCaseCount.to_string(), "test_case_count");
    }

    #[test]
    fn multi_with_two_targets() {
        let base = bitwise_and_task();
        let targets = vec![QualifiedName::main("copy"), QualifiedName::main("diag")];
        let t = TaskRecord::new(Category::Multi, targets, "q", base.stub.clone(), base.test_cases.clone());
        assert_eq!(validate_task(&t), vec![Violation::MinCompose]);
    }

    #[test]
    fn structural_violations() {
        let mut t = bitwise_and_task();
        t.stub.params = vec!["x1".into(), "x1".into()];
        t.test_cases[0].expected = json!({"k": 1});
        let v = validate_task(&t);
        assert!(v.contains(&Violation::StubParams));
        assert!(v.contains(&Violation::InputKeysMismatch));
        assert!(v.contains(&Violation::ValueKind));
        t = bitwise_and_task();
        t.question = "changed".into();
        assert_eq!(validate_task(&t), vec![Violation::IdMismatch]);
    }

    #[test]
    fn floats_keep_their_decimal_text() {
        let t: TestCase =
            serde_json::from_str(r#"{"inputs":{"m":[[1.0,2.0]]},"expected":[1.5430806348152437, 27.308232836016487]}"#).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("1.5430806348152437"));
        assert!(s.contains("[[1.0,2.0]]"));
    }
}
