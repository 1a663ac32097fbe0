//! One function per pipeline stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use obfubench_core::codegen::{emit_package, export_mismatches, opaque_contract_check, EmittedPackage, WrapperSpec};
use obfubench_core::corpus::{
    build_split, consensus_filter, read_corpus_tasks, read_split, review_sheet, sample_human_review, split_violations,
    write_corpus, write_manifest, Agreement, ConsensusConfig, SplitSpec, TASKS_FILE,
};
use obfubench_core::docs::{llm_rewrite_docs, read_original_docs, substitute_docs, DocBundle, RewriteOptions, Substituter};
use obfubench_core::grade::{aggregate, grade, Classifier, ErrorCategory, MetricReport, Templates, Verdict};
use obfubench_core::llm::{ChatEndpoint, EndpointConfig, HttpChatEndpoint};
use obfubench_core::naming::english_blocklist;
use obfubench_core::sandbox::{ExecMode, ExecutionRequest, ExecutionService, ProcessPool, SandboxResult};
use obfubench_core::tasks::{
    generate_multi_tasks, generate_single_tasks, validate_task, write_tasks, GenerationOptions, TaskRecord,
    MIN_COMPOSE, SAMPLE_SIZE,
};
use obfubench_core::verify::{analyze, VerifierConfig};
use obfubench_core::{build_map, map_violations, ApiSurface, MapOptions, ObfuscationMap, PseudowordPolicy};

use crate::config::PipelineConfig;
use crate::CliError;

pub const MAP_FILE: &str = "map.json";
pub const DOCS_FILE: &str = "docs.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const FILTER_FILE: &str = "filter.json";

pub struct Ctx {
    pub cfg: PipelineConfig,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))
}

fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Config(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

impl Ctx {
    fn corpus(&self, file: &str) -> PathBuf {
        self.cfg.paths.corpus.join(file)
    }

    pub fn surface(&self) -> Result<ApiSurface, CliError> {
        match &self.cfg.paths.surface {
            Some(p) => ApiSurface::parse_listing(&read(p)?).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(ApiSurface::reference()),
        }
    }

    fn templates(&self) -> Result<Templates, CliError> {
        match &self.cfg.paths.templates {
            Some(dir) => Templates::load(dir).map_err(|e| CliError::Config(format!("templates: {e}"))),
            None => Ok(Templates::default()),
        }
    }

    fn map_options(&self) -> MapOptions {
        MapOptions {
            obfuscate_namespaces: self.cfg.naming.obfuscate_namespaces,
            package_alias: self.cfg.naming.package_alias.clone(),
        }
    }

    fn load_map(&self, path: Option<&Path>) -> Result<ObfuscationMap, CliError> {
        let default = self.corpus(MAP_FILE);
        let path = path.unwrap_or(&default);
        ObfuscationMap::from_json(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn load_tasks(&self, path: Option<&Path>) -> Result<Vec<TaskRecord>, CliError> {
        match path {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| CliError::Config(format!("reading {}: {e}", p.display())))?;
                obfubench_core::tasks::read_tasks(BufReader::new(f)).map_err(CliError::from)
            }
            None => read_corpus_tasks(&self.cfg.paths.corpus).map_err(CliError::from),
        }
    }

    fn endpoint(&self, cfg: Option<&EndpointConfig>, role: &str) -> Result<Arc<dyn ChatEndpoint>, CliError> {
        let cfg = cfg.ok_or_else(|| {
            CliError::Config(format!(
                "no {role} endpoint configured; add [endpoints.{role}] with base_url and model to the config file"
            ))
        })?;
        let ep = HttpChatEndpoint::from_config(cfg.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Arc::new(ep))
    }

    fn sandbox(&self) -> ProcessPool {
        let s = &self.cfg.sandbox;
        ProcessPool::new(s.program.clone(), s.args.clone(), s.workers)
    }

    fn verifier(&self, map: &ObfuscationMap) -> VerifierConfig {
        let mut v = VerifierConfig::from_map(map, &self.cfg.verifier.opaque_type);
        v.return_policy = self.cfg.verifier.return_policy;
        v
    }

    fn wrapper_spec(&self, map: ObfuscationMap) -> WrapperSpec {
        let mut spec = WrapperSpec::reference(map);
        spec.opaque_type_name = self.cfg.verifier.opaque_type.clone();
        spec
    }
}

pub fn obfuscate(ctx: &Ctx, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let surface = ctx.surface()?;
    let seed = seed.unwrap_or(ctx.cfg.seeds.map);
    let map = build_map(&surface, seed, &PseudowordPolicy::default(), &ctx.map_options())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let out = out.unwrap_or_else(|| ctx.corpus(MAP_FILE));
    write(&out, map.to_canonical_json().as_bytes())?;
    tracing::info!(entries = map.len(), seed, path = %out.display(), "map written");
    println!("{} entries -> {}", map.len(), out.display());
    Ok(())
}

fn emitted(ctx: &Ctx, map: &ObfuscationMap) -> Result<EmittedPackage, CliError> {
    let spec = ctx.wrapper_spec(map.clone());
    emit_package(&spec).map_err(|e| CliError::Config(e.to_string()))
}

pub fn emit_wrapper(ctx: &Ctx, map: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let map = ctx.load_map(map.as_deref())?;
    let pkg = emitted(ctx, &map)?;
    let violations = opaque_contract_check(&pkg).map_err(|e| CliError::Config(e.to_string()))?;
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(CliError::Validation(format!("opaque type contract: {}", list.join("; "))));
    }
    let out = out.unwrap_or_else(|| ctx.cfg.paths.wrapper.clone());
    pkg.write_to(&out).map_err(|e| CliError::Config(e.to_string()))?;
    tracing::info!(files = pkg.files.len(), path = %out.display(), "wrapper written");
    println!("{} files -> {}", pkg.files.len(), out.display());
    Ok(())
}

fn substituter(map: &ObfuscationMap, surface: &ApiSurface) -> Substituter {
    Substituter::new(map).with_import_aliases(surface.import_aliases.iter().cloned())
}

pub fn docs(
    ctx: &Ctx,
    map: Option<PathBuf>,
    originals: Option<PathBuf>,
    out: Option<PathBuf>,
    rewrite: bool,
) -> Result<(), CliError> {
    let map = ctx.load_map(map.as_deref())?;
    let surface = ctx.surface()?;
    let src = originals
        .or_else(|| ctx.cfg.paths.original_docs.clone())
        .ok_or_else(|| CliError::Config("no original documentation: pass --originals or set paths.original_docs".into()))?;
    let originals = read_original_docs(BufReader::new(read(&src)?.as_bytes()))?;
    let sub = substituter(&map, &surface);
    let mut bundle = substitute_docs(&originals, &map, &sub)?;
    if rewrite {
        let ep = ctx.endpoint(ctx.cfg.endpoints.doc_rewrite.as_ref(), "doc_rewrite")?;
        let opts = RewriteOptions {
            max_in_flight: ctx.cfg.sandbox.workers.max(1),
            ..RewriteOptions::default()
        };
        let outcome = llm_rewrite_docs(&bundle, &originals, &map, &sub, Some(ep.as_ref()), &opts)?;
        if !outcome.fallbacks.is_empty() {
            tracing::warn!(count = outcome.fallbacks.len(), "rewrites fell back to substitution");
        }
        bundle = outcome.bundle;
    }
    let out = out.unwrap_or_else(|| ctx.corpus(DOCS_FILE));
    let mut buf = Vec::new();
    bundle.write_jsonl(&mut buf).map_err(|e| CliError::Config(e.to_string()))?;
    write(&out, &buf)?;
    println!("{} entries -> {}", bundle.len(), out.display());
    Ok(())
}

pub fn gen(ctx: &Ctx, per_function: usize, multi: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let ep = ctx.endpoint(ctx.cfg.endpoints.generation.as_ref(), "generation")?;
    let surface = ctx.surface()?;
    let opts = GenerationOptions {
        max_in_flight: ctx.cfg.sandbox.workers.max(1),
        ..GenerationOptions::default()
    };
    let mut tasks = Vec::new();
    if per_function > 0 {
        let r = generate_single_tasks(&surface, ep.as_ref(), per_function, &opts)?;
        if !r.uncovered.is_empty() {
            tracing::warn!(count = r.uncovered.len(), "functions without a single task");
        }
        tasks.extend(r.tasks);
    }
    if multi > 0 {
        let r = generate_multi_tasks(&surface, ep.as_ref(), multi, ctx.cfg.seeds.tasks, SAMPLE_SIZE, MIN_COMPOSE, &opts)?;
        tasks.extend(r.tasks);
    }
    if let Ok(map) = ctx.load_map(None) {
        tasks = tasks.into_iter().map(|t| t.with_doc_keys(&map)).collect();
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    let out = out.unwrap_or_else(|| ctx.corpus(TASKS_FILE));
    let mut buf = Vec::new();
    write_tasks(&tasks, &mut buf).map_err(|e| CliError::Config(e.to_string()))?;
    write(&out, &buf)?;
    println!("{} tasks -> {}", tasks.len(), out.display());
    Ok(())
}

pub fn filter(ctx: &Ctx, tasks: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let e = &ctx.cfg.endpoints;
    if e.solvers.is_empty() {
        return Err(CliError::Config(
            "no solver endpoints configured; add one or more [[endpoints.solvers]] tables".into(),
        ));
    }
    let solvers = e
        .solvers
        .iter()
        .map(|s| ctx.endpoint(Some(s), "solvers"))
        .collect::<Result<Vec<_>, _>>()?;
    let surface = ctx.surface()?;
    let input = ctx.load_tasks(tasks.as_deref())?;
    let mut cc = ConsensusConfig::new(solvers);
    if let Some(k) = e.required_agreement {
        cc.agreement = Agreement::AtLeast(k);
    }
    cc.attempts_per_solver = e.attempts_per_solver.unwrap_or(1);
    cc.max_in_flight = ctx.cfg.sandbox.workers.max(1);
    cc.limits = ctx.cfg.sandbox.limits();
    let outcome = consensus_filter(input, &cc, &ctx.sandbox(), &ctx.templates()?, &surface.package_name)?;
    let out = out.unwrap_or_else(|| ctx.corpus(TASKS_FILE));
    let mut buf = Vec::new();
    write_tasks(&outcome.retained, &mut buf).map_err(|e| CliError::Config(e.to_string()))?;
    write(&out, &buf)?;
    let report = serde_json::json!({
        "retained": outcome.retained.len(),
        "dropped": outcome.dropped,
        "indeterminate": outcome.indeterminate,
    });
    write(&ctx.corpus(FILTER_FILE), &pretty(&report))?;
    println!(
        "retained {}, dropped {}, indeterminate {}",
        outcome.retained.len(),
        outcome.dropped.len(),
        outcome.indeterminate.len()
    );
    Ok(())
}

pub fn split(
    ctx: &Ctx,
    tasks: Option<PathBuf>,
    review_sheet_path: Option<PathBuf>,
    review_fraction: f64,
) -> Result<(), CliError> {
    let surface = ctx.surface()?;
    let tasks = ctx.load_tasks(tasks.as_deref())?;
    let seed = ctx.cfg.seeds.split;
    let spec = build_split(&tasks, &surface, seed)?;
    write_corpus(&ctx.cfg.paths.corpus, &tasks, Some(&spec))?;
    let manifest = write_manifest(&ctx.cfg.paths.corpus, seed)?;
    if let Some(path) = review_sheet_path {
        let sample = sample_human_review(&tasks, review_fraction, ctx.cfg.seeds.review)?;
        let mut buf = Vec::new();
        review_sheet(&sample, &mut buf)?;
        write(&path, &buf)?;
        println!("{} review items -> {}", sample.len(), path.display());
    }
    println!(
        "train {}, test_single {}, test_multi {} ({} files in manifest)",
        spec.train_ids.len(),
        spec.test_single_ids.len(),
        spec.test_multi_ids.len(),
        manifest.files.len()
    );
    Ok(())
}

struct Submission {
    task: String,
    rollout: u32,
    source: String,
    result: Option<SandboxResult>,
}

fn collect_submissions(dir: &Path) -> Result<Vec<Submission>, CliError> {
    let io = |e: std::io::Error| CliError::Config(format!("reading {}: {e}", dir.display()));
    let mut out = Vec::new();
    let mut task_dirs: Vec<PathBuf> = fs::read_dir(dir).map_err(io)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    task_dirs.sort();
    for td in task_dirs.into_iter().filter(|p| p.is_dir()) {
        let task = td.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(&td).map_err(io)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        files.sort();
        for f in files {
            let Some(name) = f.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_suffix(".py") else { continue };
            let Ok(rollout) = stem.parse::<u32>() else {
                tracing::warn!(task = %task, file = name, "skipping solution without a numeric rollout name");
                continue;
            };
            let result_path = td.join(format!("{stem}.result.json"));
            let result = if result_path.exists() {
                let text = read(&result_path)?;
                Some(serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", result_path.display())))?)
            } else {
                None
            };
            out.push(Submission {
                task: task.clone(),
                rollout,
                source: read(&f)?,
                result,
            });
        }
    }
    Ok(out)
}

fn report_splits(ctx: &Ctx) -> Result<Vec<(String, Vec<String>)>, CliError> {
    Ok(read_split(&ctx.cfg.paths.corpus)?.map(|s: SplitSpec| s.test_splits()).unwrap_or_default())
}

fn emit_report(ctx: &Ctx, verdicts: &[Verdict], out: Option<PathBuf>) -> Result<MetricReport, CliError> {
    let splits = if verdicts.is_empty() { Vec::new() } else { report_splits(ctx)? };
    let report = aggregate(verdicts, &splits, ctx.cfg.metrics.rollouts, &ctx.cfg.metrics.ks)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    for w in &report.warnings {
        tracing::warn!(warning = %w, "aggregation");
    }
    let out = out.unwrap_or_else(|| ctx.corpus(REPORT_FILE));
    write(&out, &pretty(&report))?;
    print!("{}", report.to_table());
    Ok(report)
}

pub fn grade_cmd(ctx: &Ctx, solutions: PathBuf, out: Option<PathBuf>) -> Result<(), CliError> {
    let verdict_path = out.unwrap_or_else(|| ctx.corpus(VERDICTS_FILE));
    if !solutions.is_dir() {
        tracing::warn!(path = %solutions.display(), "no solutions directory; nothing to grade");
        write(&verdict_path, b"")?;
        emit_report(ctx, &[], None)?;
        return Ok(());
    }
    let submissions = collect_submissions(&solutions)?;
    let map = ctx.load_map(None)?;
    let tasks: BTreeMap<String, TaskRecord> = ctx.load_tasks(None)?.into_iter().map(|t| (t.id.clone(), t)).collect();
    let vcfg = ctx.verifier(&map);
    let mut classifier = Classifier::for_wrapper(&ctx.wrapper_spec(map.clone()));
    classifier.static_hallucination = ctx.cfg.verifier.static_hallucination;
    let wrapper = fs::canonicalize(&ctx.cfg.paths.wrapper).unwrap_or_else(|_| ctx.cfg.paths.wrapper.clone());

    let mut pending = Vec::new();
    let mut requests = Vec::new();
    for (i, s) in submissions.iter().enumerate() {
        let Some(task) = tasks.get(&s.task) else {
            tracing::warn!(task = %s.task, "solution for unknown task skipped");
            continue;
        };
        if s.result.is_none() {
            let mut req = ExecutionRequest::new(
                format!("{}/{}", s.task, s.rollout),
                s.source.clone(),
                task.stub.name.clone(),
                task.test_cases.clone(),
                ExecMode::Obfuscated,
            );
            req.deny_list = vec![map.source_package.clone()];
            req.wrapper_path = Some(wrapper.display().to_string());
            req.limits = ctx.cfg.sandbox.limits();
            pending.push(i);
            requests.push(req);
        }
    }
    let mut executed: BTreeMap<usize, SandboxResult> = BTreeMap::new();
    if !requests.is_empty() {
        let pool = ctx.sandbox();
        for (i, r) in pending.into_iter().zip(pool.run_many(&requests)) {
            let s = &submissions[i];
            match r {
                Ok(res) => {
                    executed.insert(i, res);
                }
                Err(e) => tracing::error!(task = %s.task, rollout = s.rollout, error = %e, "sandbox failure; not graded"),
            }
        }
    }
    let mut verdicts = Vec::new();
    for (i, s) in submissions.iter().enumerate() {
        let Some(task) = tasks.get(&s.task) else { continue };
        let Some(result) = s.result.as_ref().or_else(|| executed.get(&i)) else { continue };
        let report = analyze(&s.source, &task.stub.name, &vcfg);
        let v = grade(task, s.rollout, Some(&report), Some(result), &classifier)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        tracing::info!(task = %v.task_id, rollout = v.rollout_index, r = v.r, category = %v.error_category, "graded");
        verdicts.push(v);
    }
    let mut buf = Vec::new();
    for v in &verdicts {
        serde_json::to_writer(&mut buf, v).expect("verdict serializes");
        buf.push(b'\n');
    }
    write(&verdict_path, &buf)?;
    emit_report(ctx, &verdicts, None)?;
    Ok(())
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, CliError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(text.as_bytes()).lines().enumerate() {
        let line = line.map_err(|e| CliError::Config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn report(ctx: &Ctx, verdicts: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let path = verdicts.unwrap_or_else(|| ctx.corpus(VERDICTS_FILE));
    let verdicts = read_verdicts(&path)?;
    emit_report(ctx, &verdicts, out)?;
    Ok(())
}

/// Outcome of one invariant suite.
pub struct Check {
    pub name: &'static str,
    pub problems: Vec<String>,
}

fn check(name: &'static str, problems: Vec<String>) -> Check {
    Check { name, problems }
}

/// Runs every suite whose inputs exist; the map and wrapper suites always
/// run, on a freshly built map when none is on disk.
pub fn validate(ctx: &Ctx, out: &mut dyn Write) -> Result<bool, CliError> {
    let surface = ctx.surface()?;
    let policy = PseudowordPolicy::default();
    let map_path = ctx.corpus(MAP_FILE);
    let mut checks = Vec::new();
    let map = if map_path.exists() {
        ctx.load_map(Some(&map_path))?
    } else {
        build_map(&surface, ctx.cfg.seeds.map, &policy, &ctx.map_options()).map_err(|e| CliError::Config(e.to_string()))?
    };
    let mut problems = map_violations(&map, &surface, &policy);
    match build_map(&surface, map.seed, &policy, &ctx.map_options()) {
        Ok(again) if again == map => {}
        Ok(_) => problems.push(format!("map differs from a rebuild with seed {}", map.seed)),
        Err(e) => problems.push(e.to_string()),
    }
    let blocked: Vec<&String> = map.name_map.values().map(|q| &q.leaf).filter(|l| english_blocklist().contains(*l)).collect();
    problems.extend(blocked.into_iter().map(|b| format!("{b} is an English word")));
    checks.push(check("map", problems));

    let pkg = emitted(ctx, &map)?;
    let mut problems: Vec<String> = Vec::new();
    if let Err(e) = pkg.parse_check() {
        problems.push(e.to_string());
    }
    match opaque_contract_check(&pkg) {
        Ok(v) => problems.extend(v.iter().map(ToString::to_string)),
        Err(e) => problems.push(e.to_string()),
    }
    problems.extend(export_mismatches(&pkg, &map).into_iter().map(|(m, n)| format!("export mismatch {m}.{n}")));
    for (rel, src) in &pkg.files {
        let on_disk = ctx.cfg.paths.wrapper.join(rel);
        if on_disk.exists() && fs::read_to_string(&on_disk).ok().as_deref() != Some(src.as_str()) {
            problems.push(format!("{} differs from the emitted file", on_disk.display()));
        }
    }
    checks.push(check("wrapper", problems));

    let docs_path = ctx.corpus(DOCS_FILE);
    if docs_path.exists() {
        let bundle = DocBundle::read_jsonl(BufReader::new(read(&docs_path)?.as_bytes()))?;
        let sub = substituter(&map, &surface);
        let mut problems = Vec::new();
        for e in &bundle.entries {
            let leaks = sub.find_leaks(&format!("{}\n{}", e.signature, e.doc));
            if !leaks.is_empty() {
                problems.push(format!("{} leaks {}", e.name, leaks.join(", ")));
            }
        }
        let have: BTreeSet<&str> = bundle.entries.iter().map(|e| e.name.as_str()).collect();
        let mut missing: Vec<String> = map.name_map.values().map(|q| q.dotted()).filter(|n| !have.contains(n.as_str())).collect();
        missing.truncate(5);
        problems.extend(missing.into_iter().map(|m| format!("no documentation for {m}")));
        checks.push(check("docs", problems));
    }

    let tasks_path = ctx.corpus(TASKS_FILE);
    let mut tasks = Vec::new();
    if tasks_path.exists() {
        tasks = ctx.load_tasks(None)?;
        let mut problems = Vec::new();
        let mut ids = BTreeSet::new();
        for t in &tasks {
            if !ids.insert(&t.id) {
                problems.push(format!("duplicate task id {}", t.id));
            }
            let v = validate_task(t);
            if !v.is_empty() {
                let codes: Vec<&str> = v.iter().map(|x| x.code()).collect();
                problems.push(format!("{}: {}", t.id, codes.join(", ")));
            }
        }
        checks.push(check("tasks", problems));
    }
    if let Some(split) = read_split(&ctx.cfg.paths.corpus)? {
        checks.push(check("split", split_violations(&split, &tasks, &surface)));
    }
    let verdicts_path = ctx.corpus(VERDICTS_FILE);
    if verdicts_path.exists() {
        let mut problems = Vec::new();
        for v in read_verdicts(&verdicts_path)? {
            let r = obfubench_core::grade::compose(v.cond_tests, v.cond_reliance, v.cond_no_forbidden);
            if r != v.r {
                problems.push(format!("{}#{}: R disagrees with its conditions", v.task_id, v.rollout_index));
            }
            if (v.r == 1) != (v.error_category == ErrorCategory::None) {
                problems.push(format!("{}#{}: category {} with R={}", v.task_id, v.rollout_index, v.error_category, v.r));
            }
        }
        checks.push(check("verdicts", problems));
    }

    let mut ok = true;
    for c in &checks {
        if c.problems.is_empty() {
            let _ = writeln!(out, "ok    {}", c.name);
        } else {
            ok = false;
            let _ = writeln!(out, "FAIL  {} ({} problems)", c.name, c.problems.len());
            for p in c.problems.iter().take(20) {
                let _ = writeln!(out, "      {p}");
            }
        }
    }
    Ok(ok)
}
