//! Pseudoword generation and the seeded obfuscation map.
//!
//! Identifiers are lowercase ASCII built from alternating consonant/vowel
//! syllables (`ko-ci-to`), optionally closed by one trailing consonant
//! (`yi-su-vow`). The map is built by rejection sampling: a candidate is
//! redrawn whenever it hits the blocklist, any original name of the surface,
//! or a previously issued identifier.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;
use crate::surface::{ApiSurface, QualifiedName, SurfaceError, PYTHON_KEYWORDS};

const ENGLISH_TOP_10K: &str = include_str!("../assets/english_top10k.txt");

/// Python builtins that an obfuscated name must never shadow or resemble.
pub const PYTHON_BUILTINS: &[&str] = &[
    "abs", "aiter", "all", "anext", "any", "ascii", "bin", "bool", "breakpoint", "bytearray",
    "bytes", "callable", "chr", "classmethod", "compile", "complex", "copyright", "credits",
    "delattr", "dict", "dir", "divmod", "enumerate", "eval", "exec", "exit", "filter", "float",
    "format", "frozenset", "getattr", "globals", "hasattr", "hash", "help", "hex", "id", "input",
    "int", "isinstance", "issubclass", "iter", "len", "license", "list", "locals", "map", "max",
    "memoryview", "min", "next", "object", "oct", "open", "ord", "pow", "print", "property",
    "quit", "range", "repr", "reversed", "round", "set", "setattr", "slice", "sorted",
    "staticmethod", "str", "sum", "super", "tuple", "type", "vars", "zip",
];

/// Redraw budget for a single identifier before giving up.
const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error)]
pub enum NamingError {
    #[error("pseudoword policy misconfigured: {0}")]
    Config(String),
    #[error("pseudoword space exhausted after {attempts} draws ({issued} identifiers issued)")]
    Capacity { attempts: usize, issued: usize },
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error("no original name maps to {0}")]
    Lookup(String),
}

/// The English top-10k list used as the default blocklist.
pub fn english_blocklist() -> &'static BTreeSet<String> {
    static WORDS: OnceLock<BTreeSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| {
        ENGLISH_TOP_10K
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(str::to_ascii_lowercase)
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyllableGrammar {
    pub consonants: String,
    pub vowels: String,
    pub min_syllables: usize,
    pub max_syllables: usize,
    /// Allow one trailing consonant after the last syllable.
    pub coda: bool,
}

impl Default for SyllableGrammar {
    fn default() -> Self {
        Self {
            consonants: "bcdfghjklmnpqrstvwxyz".into(),
            vowels: "aeiou".into(),
            min_syllables: 2,
            max_syllables: 4,
            coda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudowordPolicy {
    pub min_len: usize,
    pub max_len: usize,
    pub grammar: SyllableGrammar,
    pub blocklist: BTreeSet<String>,
}

impl Default for PseudowordPolicy {
    fn default() -> Self {
        let mut blocklist = english_blocklist().clone();
        blocklist.extend(PYTHON_KEYWORDS.iter().map(|s| s.to_ascii_lowercase()));
        blocklist.extend(PYTHON_BUILTINS.iter().map(|s| s.to_string()));
        Self {
            min_len: 4,
            max_len: 9,
            grammar: SyllableGrammar::default(),
            blocklist,
        }
    }
}

impl PseudowordPolicy {
    fn check(&self) -> Result<(), NamingError> {
        let g = &self.grammar;
        if g.consonants.is_empty() || g.vowels.is_empty() {
            return Err(NamingError::Config("empty consonant or vowel set".into()));
        }
        if !g.consonants.chars().chain(g.vowels.chars()).all(|c| c.is_ascii_lowercase()) {
            return Err(NamingError::Config("grammar letters must be lowercase ASCII".into()));
        }
        if g.consonants.chars().any(|c| g.vowels.contains(c)) {
            return Err(NamingError::Config("consonant and vowel sets overlap".into()));
        }
        if g.min_syllables == 0 || g.min_syllables > g.max_syllables {
            return Err(NamingError::Config("empty syllable count range".into()));
        }
        let shortest = 2 * g.min_syllables;
        let longest = 2 * g.max_syllables + usize::from(g.coda);
        if self.min_len > self.max_len || shortest > self.max_len || longest < self.min_len {
            return Err(NamingError::Config("length bounds unreachable by the grammar".into()));
        }
        Ok(())
    }

    /// True iff `word` is `(CV){min..=max}` with an optional coda consonant
    /// and its length is within bounds. Blocklist membership is separate.
    pub fn matches_grammar(&self, word: &str) -> bool {
        let g = &self.grammar;
        let len = word.len();
        if len < self.min_len || len > self.max_len || !word.is_ascii() {
            return false;
        }
        let bytes = word.as_bytes();
        let is_c = |b: u8| g.consonants.as_bytes().contains(&b);
        let is_v = |b: u8| g.vowels.as_bytes().contains(&b);
        let (body, coda) = if len % 2 == 1 {
            if !g.coda {
                return false;
            }
            (&bytes[..len - 1], Some(bytes[len - 1]))
        } else {
            (bytes, None)
        };
        if let Some(c) = coda {
            if !is_c(c) {
                return false;
            }
        }
        let syllables = body.len() / 2;
        if syllables < g.min_syllables || syllables > g.max_syllables {
            return false;
        }
        body.chunks(2).all(|pair| is_c(pair[0]) && is_v(pair[1]))
    }

    pub fn is_blocked(&self, word: &str) -> bool {
        self.blocklist.contains(word)
    }

    fn draw(&self, rng: &mut SeededRng) -> String {
        let g = &self.grammar;
        let consonants = g.consonants.as_bytes();
        let vowels = g.vowels.as_bytes();
        let n = g.min_syllables + rng.below(g.max_syllables - g.min_syllables + 1);
        let mut word = String::with_capacity(2 * n + 1);
        for _ in 0..n {
            word.push(consonants[rng.below(consonants.len())] as char);
            word.push(vowels[rng.below(vowels.len())] as char);
        }
        if g.coda && rng.below(2) == 1 {
            word.push(consonants[rng.below(consonants.len())] as char);
        }
        word
    }

    fn fresh(
        &self,
        rng: &mut SeededRng,
        reserved: &BTreeSet<String>,
        issued: &BTreeSet<String>,
    ) -> Result<String, NamingError> {
        for _ in 0..MAX_ATTEMPTS {
            let word = self.draw(rng);
            if word.len() < self.min_len || word.len() > self.max_len {
                continue;
            }
            if self.is_blocked(&word) || reserved.contains(&word) || issued.contains(&word) {
                continue;
            }
            return Ok(word);
        }
        Err(NamingError::Capacity {
            attempts: MAX_ATTEMPTS,
            issued: issued.len(),
        })
    }
}

/// Draws one pseudoword that matches the grammar and avoids the blocklist.
pub fn generate_pseudoword(
    policy: &PseudowordPolicy,
    rng: &mut SeededRng,
) -> Result<String, NamingError> {
    policy.check()?;
    policy.fresh(rng, &BTreeSet::new(), &BTreeSet::new())
}

#[derive(Debug, Clone, Default)]
pub struct MapOptions {
    /// Obfuscate namespace segments as well as function leaves.
    pub obfuscate_namespaces: bool,
    /// Fixed package alias instead of a generated one.
    pub package_alias: Option<String>,
}

impl MapOptions {
    pub fn new() -> Self {
        Self {
            obfuscate_namespaces: true,
            package_alias: None,
        }
    }
}

/// Seeded bijection from original API names to obfuscated ones.
///
/// Serialized canonically: fixed field order, namespaces and names sorted
/// by their original dotted form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfuscationMap {
    pub seed: u64,
    pub package_alias: String,
    pub source_package: String,
    /// Original dotted namespace path to obfuscated dotted path.
    pub namespace_map: BTreeMap<String, String>,
    /// Original name to obfuscated name, both relative to their package root.
    pub name_map: BTreeMap<QualifiedName, QualifiedName>,
}

impl ObfuscationMap {
    pub fn len(&self) -> usize {
        self.name_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.name_map.is_empty()
    }

    pub fn get(&self, original: &QualifiedName) -> Option<&QualifiedName> {
        self.name_map.get(original)
    }

    /// Unique preimage of an obfuscated name.
    pub fn invert(&self, obfuscated: &QualifiedName) -> Result<&QualifiedName, NamingError> {
        self.name_map
            .iter()
            .find(|(_, v)| *v == obfuscated)
            .map(|(k, _)| k)
            .ok_or_else(|| NamingError::Lookup(obfuscated.dotted()))
    }

    pub fn inverse(&self) -> BTreeMap<QualifiedName, QualifiedName> {
        self.name_map.iter().map(|(k, v)| (v.clone(), k.clone())).collect()
    }

    /// Obfuscated namespace path for an original one (root maps to root).
    pub fn map_namespace(&self, original: &[String]) -> Option<Vec<String>> {
        if original.is_empty() {
            return Some(Vec::new());
        }
        self.namespace_map
            .get(&original.join("."))
            .map(|s| s.split('.').map(str::to_string).collect())
    }

    /// Obfuscated namespace paths, including the root, sorted.
    pub fn obfuscated_namespaces(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = vec![Vec::new()];
        let mut rest: Vec<Vec<String>> = self
            .namespace_map
            .values()
            .map(|s| s.split('.').map(str::to_string).collect())
            .collect();
        rest.sort();
        out.extend(rest);
        out
    }

    pub fn original_leaves(&self) -> BTreeSet<String> {
        self.name_map.keys().map(|k| k.leaf.clone()).collect()
    }

    pub fn obfuscated_leaves(&self) -> BTreeSet<String> {
        self.name_map.values().map(|v| v.leaf.clone()).collect()
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Builds the obfuscation map for `surface`.
///
/// Namespaces are assigned first (sorted by original path), then functions
/// (sorted by dotted name), so the result depends only on the surface's
/// content and the seed, not on input order.
pub fn build_map(
    surface: &ApiSurface,
    seed: u64,
    policy: &PseudowordPolicy,
    options: &MapOptions,
) -> Result<ObfuscationMap, NamingError> {
    surface.validate()?;
    policy.check()?;
    let mut rng = SeededRng::new(seed);

    let mut reserved: BTreeSet<String> = surface.leaves();
    reserved.insert(surface.package_name.clone());
    reserved.extend(surface.import_aliases.iter().cloned());
    for ns in surface.namespaces.iter().chain(surface.functions.iter().map(|f| &f.namespace)) {
        reserved.extend(ns.iter().cloned());
    }

    let mut issued = BTreeSet::new();
    let package_alias = match &options.package_alias {
        Some(alias) => alias.clone(),
        None => policy.fresh(&mut rng, &reserved, &issued)?,
    };
    issued.insert(package_alias.clone());

    let mut namespaces: Vec<Vec<String>> = surface.namespaces.clone();
    for ns in surface.implied_namespaces() {
        if !namespaces.contains(&ns) {
            namespaces.push(ns);
        }
    }
    namespaces.sort();
    let mut namespace_map: BTreeMap<String, String> = BTreeMap::new();
    for ns in &namespaces {
        let mapped = if options.obfuscate_namespaces {
            let parent = &ns[..ns.len() - 1];
            let mut path: Vec<String> = if parent.is_empty() {
                Vec::new()
            } else {
                namespace_map[&parent.join(".")].split('.').map(str::to_string).collect()
            };
            let word = policy.fresh(&mut rng, &reserved, &issued)?;
            issued.insert(word.clone());
            path.push(word);
            path.join(".")
        } else {
            ns.join(".")
        };
        namespace_map.insert(ns.join("."), mapped);
    }

    let mut functions = surface.functions.clone();
    functions.sort();
    let mut name_map = BTreeMap::new();
    for f in functions {
        let word = policy.fresh(&mut rng, &reserved, &issued)?;
        issued.insert(word.clone());
        let namespace = if f.namespace.is_empty() {
            Vec::new()
        } else {
            namespace_map[&f.namespace_dotted()].split('.').map(str::to_string).collect()
        };
        name_map.insert(f, QualifiedName::new(namespace, word));
    }

    Ok(ObfuscationMap {
        seed,
        package_alias,
        source_package: surface.package_name.clone(),
        namespace_map,
        name_map,
    })
}

/// Broken map properties: non-injective image, overlap with original or
/// blocklisted words, grammar misses, and surface coverage gaps. A fixed
/// package alias is exempt from the grammar and blocklist checks.
pub fn map_violations(map: &ObfuscationMap, surface: &ApiSurface, policy: &PseudowordPolicy) -> Vec<String> {
    let mut out = Vec::new();
    let mut originals: BTreeSet<&str> = surface.functions.iter().map(|f| f.leaf.as_str()).collect();
    originals.extend(surface.functions.iter().flat_map(|f| f.namespace.iter().map(String::as_str)));
    originals.insert(surface.package_name.as_str());
    originals.extend(surface.import_aliases.iter().map(String::as_str));

    let mut words: Vec<&str> = map.name_map.values().map(|q| q.leaf.as_str()).collect();
    for ns in map.namespace_map.values() {
        if let Some(last) = ns.rsplit('.').next() {
            words.push(last);
        }
    }
    let mut seen = BTreeSet::new();
    if !seen.insert(map.package_alias.as_str()) {
        out.push(format!("alias {} reused", map.package_alias));
    }
    for w in &words {
        if !seen.insert(*w) {
            out.push(format!("{w} issued twice"));
        }
        if originals.contains(w) {
            out.push(format!("{w} is an original name"));
        }
        if policy.is_blocked(w) {
            out.push(format!("{w} is blocklisted"));
        }
        if !policy.matches_grammar(w) {
            out.push(format!("{w} does not match the grammar"));
        }
    }
    if originals.contains(map.package_alias.as_str()) {
        out.push(format!("alias {} is an original name", map.package_alias));
    }
    for f in &surface.functions {
        if map.get(f).is_none() {
            out.push(format!("{} is unmapped", f.dotted()));
        }
    }
    for k in map.name_map.keys() {
        if !surface.contains(k) {
            out.push(format!("{} is not on the surface", k.dotted()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_policy() -> PseudowordPolicy {
        PseudowordPolicy {
            min_len: 4,
            max_len: 4,
            grammar: SyllableGrammar {
                consonants: "b".into(),
                vowels: "a".into(),
                min_syllables: 2,
                max_syllables: 2,
                coda: false,
            },
            blocklist: BTreeSet::new(),
        }
    }

    #[test]
    fn same_seed_same_first_word() {
        let p = PseudowordPolicy::default();
        let a = generate_pseudoword(&p, &mut SeededRng::new(99)).unwrap();
        let b = generate_pseudoword(&p, &mut SeededRng::new(99)).unwrap();
        assert_eq!(a, b);
        assert!(p.matches_grammar(&a));
    }

    #[test]
    fn published_exemplars_match_default_grammar() {
        let p = PseudowordPolicy::default();
        for w in ["kocito", "lenelo", "qubime", "yisuvow", "gosubab", "yopir", "cicip"] {
            assert!(p.matches_grammar(w), "{w}");
        }
        for w in ["rfx", "mean", "ab", "kocitokocito", "Kocito"] {
            assert!(!p.matches_grammar(w), "{w}");
        }
    }

    #[test]
    fn empty_grammar_is_a_config_error() {
        let mut p = PseudowordPolicy::default();
        p.grammar.vowels.clear();
        assert!(matches!(
            generate_pseudoword(&p, &mut SeededRng::new(1)),
            Err(NamingError::Config(_))
        ));
        let mut p = PseudowordPolicy::default();
        p.grammar.min_syllables = 5;
        assert!(matches!(
            generate_pseudoword(&p, &mut SeededRng::new(1)),
            Err(NamingError::Config(_))
        ));
    }

    #[test]
    fn exhausted_space_is_a_capacity_error() {
        let mut surface = ApiSurface::new("lib");
        surface.functions = vec![QualifiedName::main("f"), QualifiedName::main("g")];
        let opts = MapOptions::new();
        // Only "baba" exists; the package alias takes it.
        let err = build_map(&surface, 0, &tiny_policy(), &opts).unwrap_err();
        assert!(matches!(err, NamingError::Capacity { .. }));
    }

    #[test]
    fn empty_surface_gets_alias_only() {
        let surface = ApiSurface::new("lib");
        let map = build_map(&surface, 3, &PseudowordPolicy::default(), &MapOptions::new()).unwrap();
        assert!(map.name_map.is_empty());
        assert!(PseudowordPolicy::default().matches_grammar(&map.package_alias));
        assert!(map.invert(&QualifiedName::main("x")).is_err());
    }

    #[test]
    fn same_leaf_in_two_namespaces_gets_two_names() {
        let mut surface = ApiSurface::new("numpy");
        surface.functions = vec!["cross".parse().unwrap(), "linalg.cross".parse().unwrap()];
        surface.namespaces = vec![vec!["linalg".into()]];
        let map = build_map(&surface, 11, &PseudowordPolicy::default(), &MapOptions::new()).unwrap();
        let a = &map.name_map[&"cross".parse().unwrap()];
        let b = &map.name_map[&"linalg.cross".parse().unwrap()];
        assert_ne!(a.leaf, b.leaf);
        assert_eq!(b.namespace, vec![map.namespace_map["linalg"].clone()]);
        assert_ne!(map.namespace_map["linalg"], "linalg");
    }

    #[test]
    fn namespace_obfuscation_can_be_disabled() {
        let mut surface = ApiSurface::new("numpy");
        surface.functions = vec!["linalg.svd".parse().unwrap()];
        surface.namespaces = vec![vec!["linalg".into()]];
        let opts = MapOptions {
            obfuscate_namespaces: false,
            package_alias: Some("zwc".into()),
        };
        let map = build_map(&surface, 1, &PseudowordPolicy::default(), &opts).unwrap();
        assert_eq!(map.package_alias, "zwc");
        assert_eq!(map.namespace_map["linalg"], "linalg");
    }

    #[test]
    fn invert_finds_preimage() {
        let mut map = build_map(
            &ApiSurface::new("numpy"),
            0,
            &PseudowordPolicy::default(),
            &MapOptions::new(),
        )
        .unwrap();
        map.name_map.insert(QualifiedName::main("mean"), QualifiedName::main("kocito"));
        assert_eq!(map.invert(&QualifiedName::main("kocito")).unwrap().leaf, "mean");
    }

    #[test]
    fn canonical_json_is_sorted_and_stable() {
        let surface = ApiSurface::reference();
        let map = build_map(&surface, 5, &PseudowordPolicy::default(), &MapOptions::new()).unwrap();
        let json = map.to_canonical_json();
        let back = ObfuscationMap::from_json(&json).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.to_canonical_json(), json);
        let seed_at = json.find("\"seed\"").unwrap();
        let alias_at = json.find("\"package_alias\"").unwrap();
        let ns_at = json.find("\"namespace_map\"").unwrap();
        let names_at = json.find("\"name_map\"").unwrap();
        assert!(seed_at < alias_at && alias_at < ns_at && ns_at < names_at);
    }

    #[test]
    fn reference_map_has_no_violations() {
        let surface = ApiSurface::reference();
        let policy = PseudowordPolicy::default();
        let opts = MapOptions {
            package_alias: Some("zwc".into()),
            ..MapOptions::new()
        };
        let mut map = build_map(&surface, 5, &policy, &opts).unwrap();
        assert!(map_violations(&map, &surface, &policy).is_empty());
        let first = map.name_map.keys().next().unwrap().clone();
        map.name_map.get_mut(&first).unwrap().leaf = "mean".into();
        let v = map_violations(&map, &surface, &policy);
        assert!(v.iter().any(|m| m == "mean is an original name"), "{v:?}");
    }
}
