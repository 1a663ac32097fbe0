//! Pipeline configuration: one TOML file, overridable per key from the
//! environment as `OBFUBENCH_<SECTION>__<KEY>` (double underscore between
//! levels).

use std::path::{Path, PathBuf};

use obfubench_core::llm::EndpointConfig;
use obfubench_core::sandbox::Limits;
use obfubench_core::verify::ReturnPolicy;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "OBFUBENCH_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub naming: NamingSettings,
    #[serde(default)]
    pub verifier: VerifierSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NamingSettings {
    /// Fixed package name; drawn from the pseudoword grammar when absent.
    pub package_alias: Option<String>,
    pub obfuscate_namespaces: bool,
}

impl Default for NamingSettings {
    fn default() -> Self {
        Self {
            package_alias: Some("zwc".into()),
            obfuscate_namespaces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Function listing; the built-in reference surface when absent.
    pub surface: Option<PathBuf>,
    pub corpus: PathBuf,
    pub wrapper: PathBuf,
    /// Original documentation, one JSON object per line.
    pub original_docs: Option<PathBuf>,
    /// Directory with `prompt_closed.txt` and `prompt_open.txt`.
    pub templates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            surface: None,
            corpus: "corpus".into(),
            wrapper: "wrapper".into(),
            original_docs: None,
            templates: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub map: u64,
    pub tasks: u64,
    pub split: u64,
    pub review: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Endpoints {
    pub generation: Option<EndpointConfig>,
    pub doc_rewrite: Option<EndpointConfig>,
    pub solvers: Vec<EndpointConfig>,
    /// Solvers that must succeed; all of them when absent.
    pub required_agreement: Option<usize>,
    pub attempts_per_solver: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    pub program: String,
    pub args: Vec<String>,
    pub workers: usize,
    pub wall_ms: u64,
    pub memory_mb: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        let l = Limits::default();
        Self {
            program: "python3".into(),
            args: vec!["-m".into(), "obfubench_runner".into()],
            workers: 4,
            wall_ms: l.wall_ms,
            memory_mb: l.memory_mb,
        }
    }
}

impl SandboxConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            wall_ms: self.wall_ms,
            memory_mb: self.memory_mb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ks: Vec<usize>,
    pub rollouts: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5],
            rollouts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierSettings {
    pub return_policy: ReturnPolicy,
    pub static_hallucination: bool,
    pub opaque_type: String,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        Self {
            return_policy: ReturnPolicy::All,
            static_hallucination: false,
            opaque_type: obfubench_core::codegen::DEFAULT_OPAQUE_TYPE.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
}

/// Scalar or array typed as TOML when it parses as one, else a string.
fn env_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("{ENV_PREFIX}{}: {p} is not a table", path.join("__"))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses `text` and applies `vars` matching the override prefix.
    pub fn from_parts<I>(text: &str, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut overrides: Vec<(Vec<String>, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
                (!path.iter().any(String::is_empty)).then_some((path, v))
            })
            .collect();
        overrides.sort();
        for (path, raw) in overrides {
            apply_override(&mut root, &path, env_value(&raw))?;
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path` if given, else defaults, then applies the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_parts(&text, std::env::vars())
    }
}
