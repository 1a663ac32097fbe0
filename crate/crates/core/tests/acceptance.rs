//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use obfubench_core::codegen::{opaque_contract_check, WrapperSpec};
use obfubench_core::corpus::{build_split, split_violations};
use obfubench_core::docs::{read_original_docs, substitute_docs, Substituter};
use obfubench_core::grade::{grade, pass_at_k, Classifier, ErrorCategory};
use obfubench_core::naming::english_blocklist;
use obfubench_core::rng::SeededRng;
use obfubench_core::sandbox::{CaseStatus, SandboxResult};
use obfubench_core::tasks::Category;
use obfubench_core::verify::{analyze, Reliance, VerifierConfig};
use obfubench_core::{build_map, map_violations, ApiSurface, MapOptions, ObfuscationMap, PseudowordPolicy};
use regex::Regex;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn zwc_options() -> MapOptions {
    MapOptions {
        package_alias: Some("zwc".into()),
        ..MapOptions::new()
    }
}

fn reference_map(seed: u64) -> ObfuscationMap {
    build_map(&ApiSurface::reference(), seed, &PseudowordPolicy::default(), &zwc_options()).expect("reference map")
}

fn map_properties() -> Outcome {
    let surface = ApiSurface::reference();
    let policy = PseudowordPolicy::default();
    let t = Instant::now();
    let a = build_map(&surface, 2024, &policy, &zwc_options()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let b = build_map(&surface, 2024, &policy, &zwc_options()).map_err(|e| e.to_string())?;
    ensure(a == b && a.to_canonical_json() == b.to_canonical_json(), || "two runs differ".into())?;
    ensure(elapsed < Duration::from_secs(1), || format!("build took {elapsed:?}"))?;
    ensure(a.len() == surface.functions.len(), || format!("{} of {} mapped", a.len(), surface.functions.len()))?;

    let images: Vec<String> = a.name_map.values().map(|q| q.dotted()).collect();
    let distinct: BTreeSet<&String> = images.iter().collect();
    ensure(distinct.len() == images.len(), || "function images collide".into())?;
    let ns: BTreeSet<&String> = a.namespace_map.values().collect();
    ensure(ns.len() == a.namespace_map.len(), || "namespace images collide".into())?;

    let mut originals: BTreeSet<String> = surface.functions.iter().map(|f| f.leaf.clone()).collect();
    originals.extend(surface.functions.iter().flat_map(|f| f.namespace.iter().cloned()));
    originals.insert(surface.package_name.clone());
    let mut produced: BTreeSet<String> = a.name_map.values().map(|q| q.leaf.clone()).collect();
    produced.extend(a.namespace_map.values().flat_map(|p| p.split('.').map(str::to_string)));
    let clash: Vec<&String> = produced.intersection(&originals).collect();
    ensure(clash.is_empty(), || format!("reuses original names {clash:?}"))?;
    let english: Vec<&String> = produced.iter().filter(|w| english_blocklist().contains(*w)).collect();
    ensure(english.is_empty(), || format!("blocklisted words {english:?}"))?;
    let v = map_violations(&a, &surface, &policy);
    ensure(v.is_empty(), || v.join("; "))?;
    ensure(reference_map(2025) != a, || "seed has no effect".into())?;
    Ok(format!("{} functions, built in {:.1} ms", a.len(), elapsed.as_secs_f64() * 1e3))
}

fn verifier_corpus() -> Outcome {
    let header = Regex::new(r"^# expect: reliance=(\w+) forbidden=(yes|no)").unwrap();
    let cfg = VerifierConfig::new("zwc", ["numpy"]);
    let dir = common::fixture("data/verifier_corpus");
    let mut paths: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "py"))
        .collect();
    paths.sort();
    let mut wrong = Vec::new();
    for p in &paths {
        let src = fs::read_to_string(p).map_err(|e| e.to_string())?;
        let caps = header.captures(&src).ok_or_else(|| format!("{} lacks a label", p.display()))?;
        let want = match &caps[1] {
            "reliant" => Reliance::Reliant,
            "not_reliant" => Reliance::NotReliant,
            "unknown" => Reliance::Unknown,
            other => return Err(format!("bad label {other}")),
        };
        let want_forbidden = &caps[2] == "yes";
        let r = analyze(&src, "solve", &cfg);
        if r.reliance != want || r.forbidden_imports.is_empty() == want_forbidden {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            wrong.push(format!("{name}: got {:?}/{}", r.reliance, !r.forbidden_imports.is_empty()));
        }
    }
    ensure(paths.len() >= 20, || format!("only {} labeled solutions", paths.len()))?;
    ensure(wrong.is_empty(), || wrong.join("; "))?;
    Ok(format!("{} labeled solutions, all match", paths.len()))
}

fn conjunction_fuzz() -> Outcome {
    let task = common::bitwise_and_task();
    let cfg = VerifierConfig::new("zwc", ["numpy"]);
    let classifier = Classifier::new("zwc", "ZWCArray", Vec::new(), Vec::new());
    let reliant = analyze("import zwc\ndef compute_overlap(x1, x2):\n    return zwc.lenelo(x1, x2)\n", "compute_overlap", &cfg);
    let pure = analyze("def compute_overlap(x1, x2):\n    return [a & b for a, b in zip(x1, x2)]\n", "compute_overlap", &cfg);
    let importing = analyze(
        "import zwc\nimport numpy\ndef compute_overlap(x1, x2):\n    return zwc.lenelo(x1, x2)\n",
        "compute_overlap",
        &cfg,
    );
    let mut rng = SeededRng::new(1);
    for i in 0..1000 {
        let bits = rng.below(8);
        let (t, r, f) = (bits & 1 == 1, bits & 2 == 2, bits & 4 == 4);
        let mut result = SandboxResult::uniform(&task.id, 8, CaseStatus::Pass, "");
        if !t {
            let k = rng.below(8);
            result.cases[k].status = if rng.below(2) == 0 { CaseStatus::Fail } else { CaseStatus::Error };
        }
        let report = match (r, f) {
            (false, _) => pure.clone(),
            (true, true) => reliant.clone(),
            (true, false) if rng.below(2) == 0 => importing.clone(),
            (true, false) => reliant.clone(),
        };
        if !f && report.forbidden_imports.is_empty() {
            result.denials.push("numpy".into());
        }
        let v = grade(&task, 0, Some(&report), Some(&result), &classifier).map_err(|e| e.to_string())?;
        let expect = u8::from(t && r && f);
        ensure((v.cond_tests, v.cond_reliance, v.cond_no_forbidden) == (t, r, f), || {
            format!("draw {i}: conditions {:?} for {:?}", (v.cond_tests, v.cond_reliance, v.cond_no_forbidden), (t, r, f))
        })?;
        ensure(v.r == expect, || format!("draw {i}: R={} for {:?}", v.r, (t, r, f)))?;
        ensure((v.error_category == ErrorCategory::None) == (expect == 1), || format!("draw {i}: category {}", v.error_category))?;
    }
    Ok("1000 triples".into())
}

/// Mean over all k-subsets of n attempts (successes first) of "any hit".
fn subset_oracle(n: usize, c: usize, k: usize) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            total += 1;
            hit += u64::from(mask & ((1u32 << c) - 1) != 0);
        }
    }
    hit as f64 / total as f64
}

fn pass_at_k_oracle() -> Outcome {
    let mut checked = 0;
    for n in 1..=12 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                let want = subset_oracle(n, c, k);
                ensure((got - want).abs() <= 1e-12, || format!("n={n} c={c} k={k}: {got} vs {want}"))?;
                checked += 1;
            }
            let p1 = pass_at_k(n, c, 1).unwrap();
            ensure((p1 - c as f64 / n as f64).abs() <= 1e-15, || format!("pass@1 n={n} c={c} is {p1}"))?;
            let pn = pass_at_k(n, c, n).unwrap();
            ensure(pn == if c > 0 { 1.0 } else { 0.0 }, || format!("pass@n n={n} c={c} is {pn}"))?;
        }
    }
    Ok(format!("{checked} (n, c, k) triples"))
}

fn taxonomy() -> Outcome {
    let classifier = Classifier::for_wrapper(&WrapperSpec::reference(reference_map(0)));
    let published = [
        ("AttributeError: ZWCArray has no attribute 'tolist'", ErrorCategory::AttributeHallucination),
        ("AttributeError: `SVDResult` object has no attribute `s`. Did you mean: `S`?", ErrorCategory::ReturnMisinterpretation),
        ("TypeError: ldexp() takes from 2 to 3 positional arguments but 1 were given", ErrorCategory::ParameterMisalignment),
        ("TypeError: float() argument must be a string or a real number, not `ZWCArray`", ErrorCategory::NativeIncompatibility),
        ("AttributeError: module 'zwc' has no attribute 'cecim'. Did you mean: 'cicip'?", ErrorCategory::FunctionHallucination),
    ];
    for (text, want) in published {
        let got = classifier.classify_texts([text]);
        ensure(got == want, || format!("{text:?} -> {got}, expected {want}"))?;
    }
    Ok("5 messages".into())
}

fn split_invariants() -> Outcome {
    let mut rng = SeededRng::new(77);
    for round in 0..200 {
        let surface = common::synthetic_surface(3 + rng.below(28));
        let mut tasks = common::synthetic_corpus(&surface, &mut rng);
        let seed = rng.next_u64();
        let s = build_split(&tasks, &surface, seed).map_err(|e| format!("round {round}: {e}"))?;
        let v = split_violations(&s, &tasks, &surface);
        ensure(v.is_empty(), || format!("round {round}: {}", v.join("; ")))?;

        let by_id: BTreeMap<&str, Category> = tasks.iter().map(|t| (t.id.as_str(), t.category)).collect();
        ensure(s.train_ids.iter().all(|id| by_id[id.as_str()] == Category::Single), || format!("round {round}: multi in train"))?;
        let multis: BTreeSet<&str> = tasks.iter().filter(|t| t.category == Category::Multi).map(|t| t.id.as_str()).collect();
        let tm: BTreeSet<&str> = s.test_multi_ids.iter().map(String::as_str).collect();
        ensure(multis == tm, || format!("round {round}: multis misplaced"))?;
        let mut all: Vec<&str> = s.train_ids.iter().chain(&s.test_single_ids).chain(&s.test_multi_ids).map(String::as_str).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        ensure(all.len() == n && n == tasks.len(), || format!("round {round}: splits overlap or drop tasks"))?;
        for f in &surface.functions {
            let singles = tasks.iter().filter(|t| t.category == Category::Single && &t.target_functions[0] == f).count();
            let held = s
                .test_single_ids
                .iter()
                .filter(|id| tasks.iter().any(|t| &t.id == *id && &t.target_functions[0] == f))
                .count();
            ensure(held == usize::from(singles >= 2), || format!("round {round}: {} held {held} of {singles}", f.dotted()))?;
        }

        let again = build_split(&tasks, &surface, seed).unwrap();
        rng.shuffle(&mut tasks);
        let shuffled = build_split(&tasks, &surface, seed).unwrap();
        ensure(again == s && shuffled == s, || format!("round {round}: not deterministic"))?;
    }
    Ok("200 corpora".into())
}

fn doc_leak_freedom() -> Outcome {
    let surface = ApiSurface::reference();
    let map = reference_map(0);
    let f = fs::File::open(common::fixture("data/reference_docs.jsonl")).map_err(|e| e.to_string())?;
    let originals = read_original_docs(BufReader::new(f)).map_err(|e| e.to_string())?;
    let sub = Substituter::new(&map).with_import_aliases(surface.import_aliases.iter().cloned());
    let once = substitute_docs(&originals, &map, &sub).map_err(|e| e.to_string())?;

    let mut names: BTreeSet<String> = surface.functions.iter().map(|f| f.leaf.clone()).collect();
    names.extend(surface.functions.iter().flat_map(|f| f.namespace.iter().cloned()));
    names.extend(surface.import_aliases.iter().cloned());
    let alternation: Vec<String> = names.iter().map(|n| regex::escape(n)).collect();
    let leak = Regex::new(&format!(r"\b(?:{})\b|(?i:\b{}\b)", alternation.join("|"), regex::escape(&surface.package_name))).unwrap();

    let mut leaks = Vec::new();
    for e in &once.entries {
        for text in [&e.signature, &e.doc] {
            if let Some(m) = leak.find(text) {
                leaks.push(format!("{}: {:?}", e.name, m.as_str()));
            }
        }
        for text in [&e.signature, &e.doc] {
            let again = sub.substitute_text(text, None);
            ensure(&again == text, || format!("{} changes on a second pass", e.name))?;
        }
    }
    ensure(once.len() == originals.len(), || format!("{} of {} entries", once.len(), originals.len()))?;
    ensure(leaks.is_empty(), || format!("{} leaks, first {}", leaks.len(), leaks[0]))?;
    Ok(format!("{} entries, no leaks, idempotent", once.len()))
}

fn codegen_snapshot() -> Outcome {
    let pkg = common::toy_package();
    pkg.parse_check().map_err(|e| e.to_string())?;
    let got = common::snapshot(&pkg);
    ensure(got == common::golden_snapshot(), || "emitted bytes differ from the golden snapshot".into())?;
    let v = opaque_contract_check(&pkg).map_err(|e| e.to_string())?;
    ensure(v.is_empty(), || format!("{v:?}"))?;
    Ok(format!("{} files", pkg.files.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("map properties", map_properties),
        ("verifier corpus", verifier_corpus),
        ("success conjunction", conjunction_fuzz),
        ("pass@k estimator", pass_at_k_oracle),
        ("error taxonomy", taxonomy),
        ("split invariants", split_invariants),
        ("doc leak-freedom", doc_leak_freedom),
        ("codegen snapshot", codegen_snapshot),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}. {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
