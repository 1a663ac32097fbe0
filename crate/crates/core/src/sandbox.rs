//! Core side of the execution runner: wire types, the value comparator, and
//! a bounded pool that runs one runner process per request.
//!
//! Protocol: the core writes one JSON request line to the runner's stdin and
//! closes it; the runner writes one JSON result line to stdout and exits 0.
//! Both documents carry `"v": 1`.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tasks::TestCase;

pub const PROTOCOL_VERSION: u32 = 1;
pub const REL_TOL: f64 = 1e-6;
pub const ABS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("cannot start runner {command:?}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("protocol violation from runner: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Wrapper package importable, source library denied after capture.
    Obfuscated,
    /// Source library importable, no wrapper.
    Original,
    /// No denial at all.
    Unrestricted,
}

fn default_wall_ms() -> u64 {
    10_000
}
fn default_memory_mb() -> u64 {
    512
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(default = "default_wall_ms")]
    pub wall_ms: u64,
    #[serde(default = "default_memory_mb")]
    pub memory_mb: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            wall_ms: default_wall_ms(),
            memory_mb: default_memory_mb(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub v: u32,
    pub id: String,
    pub solution_source: String,
    pub stub_name: String,
    pub test_cases: Vec<TestCase>,
    pub mode: ExecMode,
    pub deny_list: Vec<String>,
    pub limits: Limits,
    pub provenance_probe: bool,
    /// Directory holding the emitted wrapper package, for obfuscated mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrapper_path: Option<String>,
}

impl ExecutionRequest {
    pub fn new(
        id: impl Into<String>,
        solution_source: impl Into<String>,
        stub_name: impl Into<String>,
        test_cases: Vec<TestCase>,
        mode: ExecMode,
    ) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id: id.into(),
            solution_source: solution_source.into(),
            stub_name: stub_name.into(),
            test_cases,
            mode,
            deny_list: Vec::new(),
            limits: Limits::default(),
            provenance_probe: false,
            wrapper_path: None,
        }
    }

    /// Obfuscated-mode requests must deny the source library root.
    pub fn check(&self, source_root: &str) -> Result<(), SandboxError> {
        if self.v != PROTOCOL_VERSION {
            return Err(SandboxError::Request(format!("unsupported version {}", self.v)));
        }
        if self.mode == ExecMode::Obfuscated && !self.deny_list.iter().any(|d| d == source_root) {
            return Err(SandboxError::Request(format!(
                "obfuscated mode must deny {source_root:?}"
            )));
        }
        if self.provenance_probe && self.mode != ExecMode::Obfuscated {
            return Err(SandboxError::Request("provenance probe needs obfuscated mode".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Pass,
    Fail,
    Error,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Tainted,
    Untainted,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub status: CaseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual: Option<Value>,
    /// Verbatim runtime message, e.g. `AttributeError: ...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
    #[serde(default)]
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl CaseResult {
    fn failed(status: CaseStatus, text: String) -> Self {
        Self {
            status,
            actual: None,
            error_text: Some(text),
            wall_ms: 0,
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxResult {
    pub v: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_error: Option<String>,
    #[serde(default)]
    pub cases: Vec<CaseResult>,
    /// Imports blocked by the deny hook, by module name.
    #[serde(default)]
    pub denials: Vec<String>,
}

impl SandboxResult {
    /// True when the module loaded and `expected` cases all passed.
    pub fn all_passed(&self, expected: usize) -> bool {
        self.load_error.is_none()
            && self.cases.len() == expected
            && self.cases.iter().all(|c| c.status == CaseStatus::Pass)
    }

    /// Error texts in case order, the load error first.
    pub fn error_texts(&self) -> impl Iterator<Item = &str> {
        self.load_error
            .as_deref()
            .into_iter()
            .chain(self.cases.iter().filter_map(|c| c.error_text.as_deref()))
    }

    /// Indices of cases reported as passing whose `actual` disagrees with
    /// the comparator.
    pub fn disagreements(&self, cases: &[TestCase]) -> Vec<usize> {
        self.cases
            .iter()
            .zip(cases)
            .enumerate()
            .filter(|(_, (r, c))| {
                r.status == CaseStatus::Pass
                    && r.actual.as_ref().is_some_and(|a| !values_match(&c.expected, a))
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Result with every case marked `status`, used when the runner dies.
    pub fn uniform(id: &str, n: usize, status: CaseStatus, text: &str) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id: id.to_string(),
            load_error: None,
            cases: (0..n).map(|_| CaseResult::failed(status, text.to_string())).collect(),
            denials: Vec::new(),
        }
    }
}

fn is_integral(n: &serde_json::Number) -> bool {
    let s = n.to_string();
    !s.contains(['.', 'e', 'E'])
}

fn floats_close(a: f64, b: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    let diff = (a - b).abs();
    diff <= ABS_TOL || diff <= REL_TOL * a.abs().max(b.abs())
}

/// Exact for integers, booleans, strings and null; floats within rel 1e-6
/// or abs 1e-9; nesting and lengths must match exactly.
pub fn values_match(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Null, Value::Null) => true,
        (Value::Bool(a), Value::Bool(b)) => a == b,
        (Value::String(a), Value::String(b)) => a == b,
        (Value::Number(a), Value::Number(b)) => {
            if is_integral(a) && is_integral(b) {
                let (sa, sb) = (a.to_string(), b.to_string());
                match (sa.parse::<i128>(), sb.parse::<i128>()) {
                    (Ok(x), Ok(y)) => x == y,
                    _ => sa == sb,
                }
            } else {
                match (a.as_f64(), b.as_f64()) {
                    (Some(x), Some(y)) => floats_close(x, y),
                    _ => false,
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_match(x, y))
        }
        _ => false,
    }
}

/// Anything that can execute a request.
pub trait ExecutionService: Send + Sync {
    fn run(&self, request: &ExecutionRequest) -> Result<SandboxResult, SandboxError>;

    fn run_many(&self, requests: &[ExecutionRequest]) -> Vec<Result<SandboxResult, SandboxError>> {
        requests.iter().map(|r| self.run(r)).collect()
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore") += 1;
        self.0.cv.notify_one();
    }
}

/// Runs each request in a fresh runner process, at most `workers` at once.
pub struct ProcessPool {
    program: String,
    args: Vec<String>,
    env: Vec<(String, String)>,
    workers: usize,
    grace_ms: u64,
    slots: Semaphore,
}

impl ProcessPool {
    pub fn new(program: impl Into<String>, args: Vec<String>, workers: usize) -> Self {
        let workers = workers.max(1);
        Self {
            program: program.into(),
            args,
            env: Vec::new(),
            workers,
            grace_ms: 2_000,
            slots: Semaphore {
                free: Mutex::new(workers),
                cv: Condvar::new(),
            },
        }
    }

    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    /// Slack added to the per-request hard deadline.
    pub fn with_grace_ms(mut self, grace_ms: u64) -> Self {
        self.grace_ms = grace_ms;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Whole-process deadline: per-case wall limit for every case plus one
    /// for module load, plus grace.
    fn deadline(&self, request: &ExecutionRequest) -> Duration {
        let cases = request.test_cases.len() as u64 + 1;
        Duration::from_millis(request.limits.wall_ms.saturating_mul(cases) + self.grace_ms)
    }

    fn spawn_and_wait(&self, request: &ExecutionRequest) -> Result<SandboxResult, SandboxError> {
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for (k, v) in &self.env {
            cmd.env(k, v);
        }
        let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
            command: self.program.clone(),
            source,
        })?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(line.as_bytes());
        });
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut out = String::new();
            let _ = stdout.read_to_string(&mut out);
            let _ = tx.send(out);
        });
        let err_reader = thread::spawn(move || {
            let mut err = String::new();
            let _ = stderr.read_to_string(&mut err);
            err
        });

        let started = Instant::now();
        let output = rx.recv_timeout(self.deadline(request));
        let _ = writer.join();
        let n = request.test_cases.len();
        let out = match output {
            Ok(out) => out,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                tracing::warn!(id = %request.id, elapsed_ms = started.elapsed().as_millis() as u64, "runner killed at deadline");
                return Ok(SandboxResult::uniform(
                    &request.id,
                    n,
                    CaseStatus::Timeout,
                    "runner exceeded its wall-clock deadline",
                ));
            }
        };
        let status = child.wait().map_err(|e| SandboxError::Protocol(e.to_string()))?;
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            let tail: String = err.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
            return Ok(SandboxResult::uniform(
                &request.id,
                n,
                CaseStatus::Error,
                &format!("runner exited with {status}: {tail}"),
            ));
        }
        let mut lines = out.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| SandboxError::Protocol("no result line".into()))?;
        if lines.next().is_some() {
            return Err(SandboxError::Protocol("more than one result line".into()));
        }
        let result: SandboxResult = serde_json::from_str(first)
            .map_err(|e| SandboxError::Protocol(format!("bad result JSON: {e}")))?;
        if result.v != PROTOCOL_VERSION {
            return Err(SandboxError::Protocol(format!("result version {}", result.v)));
        }
        if result.id != request.id {
            return Err(SandboxError::Protocol(format!(
                "result id {:?} for request {:?}",
                result.id, request.id
            )));
        }
        let expected_cases = if result.load_error.is_some() { 0 } else { n };
        if result.cases.len() != expected_cases {
            return Err(SandboxError::Protocol(format!(
                "{} case results for {expected_cases} cases",
                result.cases.len()
            )));
        }
        Ok(result)
    }
}

impl ExecutionService for ProcessPool {
    fn run(&self, request: &ExecutionRequest) -> Result<SandboxResult, SandboxError> {
        let _permit = self.slots.acquire();
        self.spawn_and_wait(request)
    }

    fn run_many(&self, requests: &[ExecutionRequest]) -> Vec<Result<SandboxResult, SandboxError>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("thread pool");
        pool.install(|| requests.par_iter().map(|r| self.run(r)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn comparator_rules() {
        assert!(values_match(&json!([1, 2]), &json!([1, 2])));
        assert!(!values_match(&json!([1, 2]), &json!([1, 2, 3])));
        assert!(!values_match(&json!([[1], 2]), &json!([1, 2])));
        assert!(values_match(&json!(1.0), &json!(1.0000001)));
        assert!(values_match(&json!(0.0), &json!(1e-10)));
        assert!(!values_match(&json!(1.0), &json!(1.001)));
        assert!(values_match(&json!(3), &json!(3.0)));
        assert!(!values_match(&json!(true), &json!(1)));
        assert!(!values_match(&json!("a"), &json!("b")));
        let big: Value = serde_json::from_str("123456789012345678901234567890").unwrap();
        let big2: Value = serde_json::from_str("123456789012345678901234567891").unwrap();
        assert!(values_match(&big, &big));
        assert!(!values_match(&big, &big2));
    }

    #[test]
    fn obfuscated_request_must_deny_source() {
        let mut r = ExecutionRequest::new("t", "", "f", vec![], ExecMode::Obfuscated);
        assert!(r.check("numpy").is_err());
        r.deny_list.push("numpy".into());
        r.check("numpy").unwrap();
        let wire = serde_json::to_value(&r).unwrap();
        assert_eq!(wire["v"], json!(1));
        assert_eq!(wire["mode"], json!("obfuscated"));
        assert_eq!(wire["limits"], json!({"wall_ms": 10000, "memory_mb": 512}));
    }

    #[test]
    fn missing_case_results_fail_the_tests_condition() {
        let r = SandboxResult::uniform("x", 2, CaseStatus::Pass, "");
        assert!(r.all_passed(2));
        assert!(!r.all_passed(3));
    }
}
