//! Experiment configuration. The same JSON shape is read from `--config`
//! files and echoed verbatim into every report.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{import_jsonl, CorpusError, TaskMode, TaskSpec};
use crate::prompting::OrderStrategy;
use crate::scoring::{ModelFamily, DEFAULT_HYPOTHESIS_TEMPLATE};

pub const DEFAULT_SEEDS: [u64; 3] = [13, 42, 77];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    FewshotBoolean,
    ZeroshotQa,
    ZeroshotEntail,
}

impl EvalMode {
    pub fn is_zeroshot(self) -> bool {
        !matches!(self, EvalMode::FewshotBoolean)
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::FewshotBoolean => "fewshot_boolean",
            EvalMode::ZeroshotQa => "zeroshot_qa",
            EvalMode::ZeroshotEntail => "zeroshot_entail",
        })
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fewshot_boolean" | "fewshot" => Ok(EvalMode::FewshotBoolean),
            "zeroshot_qa" => Ok(EvalMode::ZeroshotQa),
            "zeroshot_entail" => Ok(EvalMode::ZeroshotEntail),
            other => Err(format!(
                "unknown mode `{other}` (expected fewshot_boolean, zeroshot_qa or zeroshot_entail)"
            )),
        }
    }
}

/// Where predictions come from. `model` names either a model served at
/// `server_url` or, with an `oracle:` prefix, a built-in oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub model: String,
    pub server_url: Option<String>,
    /// Never written back out.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub oracle_family: Option<ModelFamily>,
    pub oracle_max_tokens: usize,
    pub oracle_seed: u64,
    pub oracle_constant_score: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            server_url: None,
            api_key: None,
            timeout_secs: 120,
            max_in_flight: 8,
            max_retries: 2,
            oracle_family: None,
            oracle_max_tokens: 1024,
            oracle_seed: 0,
            oracle_constant_score: 0.0,
        }
    }
}

impl BackendConfig {
    pub const ORACLE_PREFIX: &'static str = "oracle:";

    pub fn oracle_name(&self) -> Option<&str> {
        self.model.strip_prefix(Self::ORACLE_PREFIX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Canonical JSONL corpus supplying shots (and queries when monolingual).
    pub source: PathBuf,
    /// Corpus supplying queries in cross-lingual runs.
    pub target: Option<PathBuf>,
    pub task: TaskMode,
    pub backend: BackendConfig,
    pub mode: EvalMode,
    /// `None` resolves to the planned K schedule.
    pub k_values: Option<Vec<usize>>,
    pub order_strategy: OrderStrategy,
    pub seeds: Vec<u64>,
    pub query_limit: Option<usize>,
    pub hypothesis_template: String,
    /// Tokens held back from the context window; defaults to the longest
    /// query line plus 8.
    pub reserve: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: PathBuf::new(),
            target: None,
            task: TaskMode::Monolingual,
            backend: BackendConfig::default(),
            mode: EvalMode::FewshotBoolean,
            k_values: None,
            order_strategy: OrderStrategy::Interleaved,
            seeds: DEFAULT_SEEDS.to_vec(),
            query_limit: None,
            hypothesis_template: DEFAULT_HYPOTHESIS_TEMPLATE.to_string(),
            reserve: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.source.as_os_str().is_empty() {
            return invalid("no source corpus given");
        }
        if self.backend.model.is_empty() {
            return invalid("no model given");
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        if self.backend.max_in_flight == 0 {
            return invalid("max_in_flight must be at least 1");
        }
        if matches!(&self.k_values, Some(k) if k.is_empty()) && !self.mode.is_zeroshot() {
            return invalid("k_values must not be empty");
        }
        if self.query_limit == Some(0) {
            return invalid("query_limit must be positive");
        }
        match (self.task, &self.target) {
            (TaskMode::CrossLingual, None) => invalid("cross-lingual task needs a target corpus"),
            (TaskMode::Monolingual, Some(t)) if *t != self.source => {
                invalid("monolingual task takes a single corpus; use task cross_lingual with a target")
            }
            _ => Ok(()),
        }
    }

    pub fn load_task(&self) -> Result<TaskSpec, ConfigError> {
        self.validate()?;
        let source = Arc::new(import_jsonl(&self.source)?);
        match (self.task, &self.target) {
            (TaskMode::CrossLingual, Some(target)) => {
                let target = Arc::new(import_jsonl(target)?);
                Ok(TaskSpec::cross_lingual(source, target)?)
            }
            _ => Ok(TaskSpec::monolingual(source)),
        }
    }
}
