#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use indexmap::IndexMap;
use obfubench_core::llm::{ChatMessage, ChatEndpoint, TransportError};
use obfubench_core::rng::SeededRng;
use obfubench_core::sandbox::ProcessPool;
use obfubench_core::tasks::{Category, Stub, TaskRecord, TestCase};
use obfubench_core::codegen::{emit_package, EmittedPackage, WrapperSpec};
use obfubench_core::{build_map, ApiSurface, MapOptions, ObfuscationMap, PseudowordPolicy, QualifiedName};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn fake_pool(workers: usize) -> ProcessPool {
    let script = fixture("fixtures/fake_runner.py");
    ProcessPool::new("python3", vec![script.display().to_string()], workers).with_grace_ms(300)
}

pub fn case(inputs: &[(&str, &str)], expected: &str) -> TestCase {
    TestCase {
        inputs: inputs
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::from_str(v).unwrap()))
            .collect::<IndexMap<_, _>>(),
        expected: serde_json::from_str(expected).unwrap(),
    }
}

/// The published bitwise-and single task with its eight I/O rows.
pub fn bitwise_and_task() -> TaskRecord {
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
    TaskRecord::new(
        Category::Single,
        vec![QualifiedName::main("bitwise_and")],
        "Given two lists of equal length representing collision masks of sprites from two layers, compute the overlapping collision areas by applying a bitwise AND to each corresponding pair.",
        Stub {
            name: "compute_overlap".into(),
            params: vec!["x1".into(), "x2".into()],
        },
        rows.iter().map(|(a, b, e)| case(&[("x1", a), ("x2", b)], e)).collect(),
    )
}

/// Replies with `reply(call_index)`; counts calls.
pub struct Scripted<F> {
    pub id: String,
    pub calls: AtomicUsize,
    pub reply: F,
}

impl<F> Scripted<F>
where
    F: Fn(usize, &[ChatMessage]) -> Result<String, TransportError> + Send + Sync,
{
    pub fn new(id: &str, reply: F) -> Self {
        Self {
            id: id.into(),
            calls: AtomicUsize::new(0),
            reply,
        }
    }
}

impl<F> ChatEndpoint for Scripted<F>
where
    F: Fn(usize, &[ChatMessage]) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.reply)(i, messages)
    }

    fn id(&self) -> &str {
        &self.id
    }
}

pub fn fenced(lang: &str, body: &str) -> String {
    format!("Here you go.\n```{lang}\n{body}\n```\n")
}

/// Surface of `fns` functions in a few namespaces.
pub fn synthetic_surface(fns: usize) -> ApiSurface {
    let mut s = ApiSurface::new("numpy");
    s.functions = (0..fns)
        .map(|i| match i % 3 {
            0 => QualifiedName::main(format!("f{i}")),
            1 => QualifiedName::new(vec!["linalg".into()], format!("f{i}")),
            _ => QualifiedName::new(vec!["fft".into()], format!("f{i}")),
        })
        .collect();
    s.namespaces = vec![vec!["linalg".into()], vec!["fft".into()]];
    s
}

/// Random corpus over `surface`: each function gets 1..=4 singles, plus a
/// random number of multis.
pub fn synthetic_corpus(surface: &ApiSurface, rng: &mut SeededRng) -> Vec<TaskRecord> {
    let stub = || Stub {
        name: "solve".into(),
        params: vec!["x".into()],
    };
    let cases = || (0..8).map(|i| case(&[("x", &i.to_string())], &i.to_string())).collect::<Vec<_>>();
    let mut out = Vec::new();
    for f in &surface.functions {
        for j in 0..1 + rng.below(4) {
            out.push(TaskRecord::new(Category::Single, vec![f.clone()], format!("q {} {j}", f.dotted()), stub(), cases()));
        }
    }
    for j in 0..rng.below(12) {
        let picks: Vec<QualifiedName> = rng
            .sample_indices(surface.functions.len(), 3)
            .into_iter()
            .map(|i| surface.functions[i].clone())
            .collect();
        out.push(TaskRecord::new(Category::Multi, picks, format!("multi {j}"), stub(), cases()));
    }
    rng.shuffle(&mut out);
    out
}

pub const TOY_LISTING: &str = "# package: numpy\n# alias: np\nbitwise_and\nmean\nreshape\nlinalg.svd\nlinalg.norm\n";

/// Five functions over two namespaces, alias `zwc`, seed 5.
pub fn toy_map() -> ObfuscationMap {
    let surface = ApiSurface::parse_listing(TOY_LISTING).unwrap();
    let opts = MapOptions {
        package_alias: Some("zwc".into()),
        ..MapOptions::new()
    };
    build_map(&surface, 5, &PseudowordPolicy::default(), &opts).unwrap()
}

pub fn toy_package() -> EmittedPackage {
    emit_package(&WrapperSpec::reference(toy_map())).unwrap()
}

/// Every emitted file under a path banner, in emission order.
pub fn snapshot(pkg: &EmittedPackage) -> String {
    let mut s = String::new();
    for (path, body) in &pkg.files {
        s.push_str(&format!("===== {path} =====\n{body}"));
        if !body.ends_with('\n') {
            s.push('\n');
        }
    }
    s
}

pub fn golden_snapshot() -> String {
    std::fs::read_to_string(fixture("golden/toy_wrapper.txt")).expect("golden file; regenerate with UPDATE_GOLDEN=1")
}
