use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, RunMetrics};
use crate::config::ExperimentConfig;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {path}: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot merge reports: {0}")]
    Merge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub runs: Vec<RunMetrics>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

impl CellSummary {
    pub fn from_runs(runs: Vec<RunMetrics>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let f1: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_f1, std_f1) = mean_std(&f1);
        Self {
            runs,
            mean_accuracy,
            std_accuracy,
            mean_f1,
            std_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub k: usize,
    pub seed: u64,
    pub completed_queries: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub timestamp: String,
    pub backend: String,
    pub backend_family: String,
    pub max_tokens: usize,
    pub artifact_version: String,
    pub prompt_format_version: String,
    pub f1_variant: String,
    pub source_corpus: String,
    pub target_corpus: String,
    pub hypothesis_template: Option<String>,
    pub token_budget_reserve: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_echo: ExperimentConfig,
    /// Keyed by shot count k.
    pub cells: BTreeMap<usize, CellSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CellFailure>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ReportError::Malformed {
            path: path.to_path_buf(),
            source,
        })
    }

    /// One row per (k, seed), then `mean` and `std` rows for each k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,seed,accuracy,macro_f1,n_queries,truncated_queries\n");
        for (k, cell) in &self.cells {
            for r in &cell.runs {
                let _ = writeln!(
                    out,
                    "{k},{},{:.6},{:.6},{},{}",
                    r.seed, r.accuracy, r.macro_f1, r.n_queries, r.truncated_queries
                );
            }
            let _ = writeln!(out, "{k},mean,{:.6},{:.6},,", cell.mean_accuracy, cell.mean_f1);
            let _ = writeln!(out, "{k},std,{:.6},{:.6},,", cell.std_accuracy, cell.std_f1);
        }
        out
    }

    /// Mean ± std per k, for accuracy/F1-versus-k error-band plots.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::from("k,mean_accuracy,std_accuracy,mean_f1,std_f1\n");
        for (k, c) in &self.cells {
            let _ = writeln!(
                out,
                "{k},{:.6},{:.6},{:.6},{:.6}",
                c.mean_accuracy, c.std_accuracy, c.mean_f1, c.std_f1
            );
        }
        out
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<(), ReportError> {
        let body = match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        };
        std::fs::write(path, body).map_err(|source| ReportError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Combines reports of the same experiment run over disjoint k values.
    pub fn merge(mut self, other: EvalReport) -> Result<EvalReport, ReportError> {
        let mut a = self.config_echo.clone();
        let mut b = other.config_echo.clone();
        a.k_values = None;
        b.k_values = None;
        if a != b {
            return Err(ReportError::Merge("reports come from different configurations".into()));
        }
        if let Some(k) = other.cells.keys().find(|k| self.cells.contains_key(k)) {
            return Err(ReportError::Merge(format!("both reports contain cell k={k}")));
        }
        self.cells.extend(other.cells);
        self.failures.extend(other.failures);
        let ks: Vec<usize> = self.cells.keys().copied().collect();
        self.config_echo.k_values = Some(ks);
        Ok(self)
    }
}
