//! Consensus filtering, train/test splits, review sampling and the corpus
//! directory layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufReader};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grade::{standard_prompt, Templates};
use crate::llm::{ChatEndpoint, ChatMessage};
use crate::python::extract_fenced_block;
use crate::rng::SeededRng;
use crate::sandbox::{ExecMode, ExecutionRequest, ExecutionService, Limits};
use crate::surface::{ApiSurface, QualifiedName};
use crate::tasks::{read_tasks, write_tasks, Category, TaskError, TaskRecord};

pub const CONSENSUS_FAILED: &str = "consensus_failed";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("functions without a single-function task: {}", .0.join(", "))]
    Coverage(Vec<String>),
    #[error("task {task} targets {target}, which is not on the surface")]
    UnknownTarget { task: String, target: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    All,
    AtLeast(usize),
}

#[derive(Clone)]
pub struct ConsensusConfig {
    pub solvers: Vec<Arc<dyn ChatEndpoint>>,
    pub agreement: Agreement,
    pub attempts_per_solver: usize,
    pub max_in_flight: usize,
    pub limits: Limits,
}

impl ConsensusConfig {
    pub fn new(solvers: Vec<Arc<dyn ChatEndpoint>>) -> Self {
        Self {
            solvers,
            agreement: Agreement::All,
            attempts_per_solver: 1,
            max_in_flight: 4,
            limits: Limits::default(),
        }
    }

    fn required(&self) -> usize {
        match self.agreement {
            Agreement::All => self.solvers.len(),
            Agreement::AtLeast(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub retained: Vec<TaskRecord>,
    pub dropped: Vec<Dropped>,
    /// Tasks whose outcome infrastructure failures left open.
    pub indeterminate: Vec<Dropped>,
}

enum Attempt {
    Solved,
    Unsolved,
    Broken(String),
}

fn attempt(
    task: &TaskRecord,
    solver: &dyn ChatEndpoint,
    tag: &str,
    prompt: &str,
    cfg: &ConsensusConfig,
    sandbox: &dyn ExecutionService,
) -> Attempt {
    let reply = match solver.complete(&[ChatMessage::user(prompt)]) {
        Ok(r) => r,
        Err(e) => return Attempt::Broken(format!("{}: {e}", solver.id())),
    };
    let Some(code) = extract_fenced_block(&reply, &["python", "py"]) else {
        return Attempt::Unsolved;
    };
    let mut req = ExecutionRequest::new(
        format!("{}-{tag}", task.id),
        code,
        task.stub.name.clone(),
        task.test_cases.clone(),
        ExecMode::Unrestricted,
    );
    req.limits = cfg.limits;
    match sandbox.run(&req) {
        Ok(r) if r.all_passed(task.test_cases.len()) => Attempt::Solved,
        Ok(_) => Attempt::Unsolved,
        Err(e) => Attempt::Broken(e.to_string()),
    }
}

/// Keeps the tasks enough independent solvers solve against the source
/// library, each in a fresh conversation.
pub fn consensus_filter(
    tasks: Vec<TaskRecord>,
    cfg: &ConsensusConfig,
    sandbox: &dyn ExecutionService,
    templates: &Templates,
    source_package: &str,
) -> Result<FilterOutcome, CorpusError> {
    if cfg.solvers.is_empty() {
        return Err(CorpusError::Config("consensus needs at least one solver".into()));
    }
    if cfg.attempts_per_solver == 0 {
        return Err(CorpusError::Config("attempts_per_solver must be positive".into()));
    }
    if cfg.required() == 0 || cfg.required() > cfg.solvers.len() {
        return Err(CorpusError::Config(format!(
            "agreement of {} cannot be met by {} solvers",
            cfg.required(),
            cfg.solvers.len()
        )));
    }
    let judge = |task: &TaskRecord| -> Result<bool, String> {
        let prompt = standard_prompt(task, templates, source_package);
        let mut solved = 0;
        for (s, solver) in cfg.solvers.iter().enumerate() {
            for a in 0..cfg.attempts_per_solver {
                match attempt(task, solver.as_ref(), &format!("s{s}a{a}"), &prompt, cfg, sandbox) {
                    Attempt::Solved => {
                        solved += 1;
                        break;
                    }
                    Attempt::Unsolved => {}
                    Attempt::Broken(e) => return Err(e),
                }
            }
        }
        tracing::debug!(task = %task.id, solved, "consensus");
        Ok(solved >= cfg.required())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<bool, String>> = pool.install(|| tasks.par_iter().map(judge).collect());
    let mut out = FilterOutcome::default();
    for (task, r) in tasks.into_iter().zip(results) {
        match r {
            Ok(true) => out.retained.push(task),
            Ok(false) => out.dropped.push(Dropped {
                id: task.id,
                reason: CONSENSUS_FAILED.into(),
            }),
            Err(e) => {
                tracing::warn!(task = %task.id, error = %e, "consensus indeterminate");
                out.indeterminate.push(Dropped { id: task.id, reason: e })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_single_ids: Vec<String>,
    pub test_multi_ids: Vec<String>,
    /// Surface function (dotted) to its number of train tasks.
    pub coverage_report: BTreeMap<String, usize>,
}

impl SplitSpec {
    /// `(split name, ids)` pairs in report order.
    pub fn named(&self) -> Vec<(String, Vec<String>)> {
        vec![
            ("train".into(), self.train_ids.clone()),
            ("test_single".into(), self.test_single_ids.clone()),
            ("test_multi".into(), self.test_multi_ids.clone()),
        ]
    }

    /// Test splits only, as graded.
    pub fn test_splits(&self) -> Vec<(String, Vec<String>)> {
        self.named().into_iter().skip(1).collect()
    }
}

/// Every single task lands in train except one per function that has two
/// or more, which is held out; every multi task lands in test.
pub fn build_split(tasks: &[TaskRecord], surface: &ApiSurface, seed: u64) -> Result<SplitSpec, CorpusError> {
    let mut by_fn: BTreeMap<&QualifiedName, Vec<&str>> =
        surface.functions.iter().map(|f| (f, Vec::new())).collect();
    let mut multis = Vec::new();
    for t in tasks {
        match t.category {
            Category::Single => {
                let target = t.target_functions.first().ok_or_else(|| CorpusError::UnknownTarget {
                    task: t.id.clone(),
                    target: String::new(),
                })?;
                by_fn
                    .get_mut(target)
                    .ok_or_else(|| CorpusError::UnknownTarget {
                        task: t.id.clone(),
                        target: target.dotted(),
                    })?
                    .push(&t.id);
            }
            Category::Multi => multis.push(t.id.clone()),
        }
    }
    let uncovered: Vec<String> = by_fn
        .iter()
        .filter(|(_, ids)| ids.is_empty())
        .map(|(f, _)| f.dotted())
        .collect();
    if !uncovered.is_empty() {
        return Err(CorpusError::Coverage(uncovered));
    }
    let mut rng = SeededRng::new(seed);
    let mut train = Vec::new();
    let mut test_single = Vec::new();
    let mut coverage = BTreeMap::new();
    for (f, ids) in by_fn.iter_mut() {
        ids.sort_unstable();
        rng.shuffle(ids);
        let held = usize::from(ids.len() >= 2);
        test_single.extend(ids[..held].iter().map(|s| s.to_string()));
        train.extend(ids[held..].iter().map(|s| s.to_string()));
        coverage.insert(f.dotted(), ids.len() - held);
    }
    train.sort();
    test_single.sort();
    multis.sort();
    Ok(SplitSpec {
        seed,
        train_ids: train,
        test_single_ids: test_single,
        test_multi_ids: multis,
        coverage_report: coverage,
    })
}

/// Number of review items for `n` tasks: the ceiling of `fraction * n`.
pub fn review_count(n: usize, fraction: f64) -> usize {
    let exact = fraction * n as f64;
    let rounded = exact.round();
    let m = if (exact - rounded).abs() < 1e-9 { rounded } else { exact.ceil() };
    (m as usize).min(n)
}

/// Deterministic sample of `⌈fraction·n⌉` tasks, stratified by category
/// with largest-remainder allocation.
pub fn sample_human_review(
    tasks: &[TaskRecord],
    fraction: f64,
    seed: u64,
) -> Result<Vec<&TaskRecord>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::Config(format!("review fraction {fraction} outside (0, 1]")));
    }
    let n = tasks.len();
    let m = review_count(n, fraction);
    let mut strata: BTreeMap<Category, Vec<&TaskRecord>> = BTreeMap::new();
    for t in tasks {
        strata.entry(t.category).or_default().push(t);
    }
    let mut alloc: Vec<(Category, usize, usize)> = strata
        .iter()
        .map(|(c, ts)| (*c, m * ts.len() / n.max(1), (m * ts.len()) % n.max(1)))
        .collect();
    let mut left = m - alloc.iter().map(|a| a.1).sum::<usize>();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| alloc[b].2.cmp(&alloc[a].2).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        alloc[i].1 += 1;
        left -= 1;
    }
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(m);
    for (cat, k, _) in alloc {
        let mut pool = strata.remove(&cat).unwrap_or_default();
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        for i in rng.sample_indices(pool.len(), k) {
            out.push(pool[i]);
        }
    }
    Ok(out)
}

/// CSV review sheet with blank columns for the reviewer.
pub fn review_sheet<W: io::Write>(tasks: &[&TaskRecord], out: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "category", "targets", "question", "stub", "cases", "valid", "notes"])
        .map_err(io::Error::from)?;
    for t in tasks {
        let targets: Vec<String> = t.target_functions.iter().map(QualifiedName::dotted).collect();
        let category = t.category.to_string();
        let cases = t.test_cases.len().to_string();
        w.write_record([
            t.id.as_str(),
            category.as_str(),
            targets.join(" ").as_str(),
            t.question.as_str(),
            t.stub.render().trim_end(),
            cases.as_str(),
            "",
            "",
        ])
        .map_err(io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    /// File name to sha256 hex digest.
    pub files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String, CorpusError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `tasks.jsonl` sorted by id and, if given, `split.json`.
pub fn write_corpus(dir: &Path, tasks: &[TaskRecord], split: Option<&SplitSpec>) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    let mut sorted: Vec<TaskRecord> = tasks.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut buf = Vec::new();
    write_tasks(&sorted, &mut buf)?;
    fs::write(dir.join(TASKS_FILE), buf)?;
    if let Some(s) = split {
        fs::write(dir.join(SPLIT_FILE), json_pretty(s)?)?;
    }
    Ok(())
}

/// Records digests of every known artifact present in `dir`.
pub fn write_manifest(dir: &Path, seed: u64) -> Result<CorpusManifest, CorpusError> {
    let tasks = read_corpus_tasks(dir)?;
    let mut counts = BTreeMap::new();
    counts.insert("tasks".into(), tasks.len());
    counts.insert("single".into(), tasks.iter().filter(|t| t.category == Category::Single).count());
    counts.insert("multi".into(), tasks.iter().filter(|t| t.category == Category::Multi).count());
    if let Some(split) = read_split(dir)? {
        counts.insert("train".into(), split.train_ids.len());
        counts.insert("test_single".into(), split.test_single_ids.len());
        counts.insert("test_multi".into(), split.test_multi_ids.len());
    }
    let mut files = BTreeMap::new();
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    names.sort();
    for name in names {
        files.insert(name.clone(), sha256_file(&dir.join(&name))?);
    }
    let manifest = CorpusManifest { seed, counts, files };
    fs::write(dir.join(MANIFEST_FILE), json_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_corpus_tasks(dir: &Path) -> Result<Vec<TaskRecord>, CorpusError> {
    let f = fs::File::open(dir.join(TASKS_FILE))?;
    Ok(read_tasks(BufReader::new(f))?)
}

pub fn read_split(dir: &Path) -> Result<Option<SplitSpec>, CorpusError> {
    let path = dir.join(SPLIT_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
}

/// Violated split invariants, as readable strings.
pub fn split_violations(split: &SplitSpec, tasks: &[TaskRecord], surface: &ApiSurface) -> Vec<String> {
    let by_id: BTreeMap<&str, &TaskRecord> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut out = Vec::new();
    let train: BTreeSet<&str> = split.train_ids.iter().map(String::as_str).collect();
    let ts: BTreeSet<&str> = split.test_single_ids.iter().map(String::as_str).collect();
    let tm: BTreeSet<&str> = split.test_multi_ids.iter().map(String::as_str).collect();
    if !train.is_disjoint(&ts) || !train.is_disjoint(&tm) || !ts.is_disjoint(&tm) {
        out.push("splits overlap".into());
    }
    let mut covered = BTreeSet::new();
    for id in &train {
        match by_id.get(id) {
            Some(t) if t.category == Category::Single => covered.extend(t.target_functions.iter()),
            Some(_) => out.push(format!("train task {id} is not single-function")),
            None => out.push(format!("train task {id} is unknown")),
        }
    }
    for f in &surface.functions {
        if !covered.contains(f) {
            out.push(format!("{} has no train task", f.dotted()));
        }
    }
    for t in tasks {
        let id = t.id.as_str();
        let placed = train.contains(id) || ts.contains(id) || tm.contains(id);
        match t.category {
            Category::Multi if !tm.contains(id) => out.push(format!("multi task {id} is not in test")),
            _ if !placed => out.push(format!("task {id} is in no split")),
            _ => {}
        }
    }
    out
}
