use std::path::PathBuf;

use clap::Args;

use icx_core::config::{EvalMode, ExperimentConfig};
use icx_core::corpus::TaskMode;
use icx_core::prompting::OrderStrategy;
use icx_netbackend::{ENV_API_KEY, ENV_SERVER_URL};

use crate::exit::{usage, CliResult};

/// Experiment flags shared by `plan` and `run`.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// JSON config file; flags and environment override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = ENV_SERVER_URL)]
    pub server_url: Option<String>,
    #[arg(long, env = ENV_API_KEY, hide_env_values = true)]
    pub api_key: Option<String>,
    /// Served model name, or oracle:{uniform,memorizing,hash,nli_gold,nli_constant}.
    #[arg(long)]
    pub model: Option<String>,
    /// monolingual or cross_lingual; inferred from --target when omitted.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskMode>,
    /// Canonical JSONL corpus supplying shots.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Canonical JSONL corpus supplying queries (cross-lingual).
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, value_parser = str::parse::<EvalMode>)]
    pub mode: Option<EvalMode>,
    /// Comma-separated shot counts, e.g. 0,5,10.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = str::parse::<OrderStrategy>)]
    pub order: Option<OrderStrategy>,
    #[arg(long)]
    pub query_limit: Option<usize>,
    #[arg(long)]
    pub reserve: Option<usize>,
    #[arg(long)]
    pub hypothesis_template: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Context size reported by oracle backends.
    #[arg(long)]
    pub oracle_max_tokens: Option<usize>,
    /// Override an oracle's family (causal, seq2seq, nli).
    #[arg(long)]
    pub oracle_family: Option<String>,
    /// On-disk spill directory for the response cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskMode, String> {
    match s {
        "monolingual" => Ok(TaskMode::Monolingual),
        "cross_lingual" | "crosslingual" => Ok(TaskMode::CrossLingual),
        other => Err(format!(
            "unknown task `{other}` (expected monolingual or cross_lingual)"
        )),
    }
}

impl ExperimentArgs {
    /// Defaults, then the config file, then environment and flags (clap has
    /// already folded the environment into the flag values).
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).map_err(usage)?,
            None => ExperimentConfig::default(),
        };
        let file_had_task = self.config.is_some();
        if let Some(v) = &self.server_url {
            c.backend.server_url = Some(v.clone());
        }
        if let Some(v) = &self.api_key {
            c.backend.api_key = Some(v.clone());
        }
        if let Some(v) = &self.model {
            c.backend.model = v.clone();
        }
        if let Some(v) = &self.source {
            c.source = v.clone();
        }
        if let Some(v) = &self.target {
            c.target = Some(v.clone());
        }
        match self.task {
            Some(t) => c.task = t,
            None if self.target.is_some() || !file_had_task => {
                c.task = match &c.target {
                    Some(t) if *t != c.source => TaskMode::CrossLingual,
                    _ => TaskMode::Monolingual,
                };
            }
            None => {}
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = &self.k {
            c.k_values = Some(v.clone());
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.clone();
        }
        if let Some(v) = self.order {
            c.order_strategy = v;
        }
        if let Some(v) = self.query_limit {
            c.query_limit = Some(v);
        }
        if let Some(v) = self.reserve {
            c.reserve = Some(v);
        }
        if let Some(v) = &self.hypothesis_template {
            c.hypothesis_template = v.clone();
        }
        if let Some(v) = self.max_in_flight {
            c.backend.max_in_flight = v;
        }
        if let Some(v) = self.oracle_max_tokens {
            c.backend.oracle_max_tokens = v;
        }
        if let Some(v) = &self.oracle_family {
            c.backend.oracle_family = Some(v.parse().map_err(|e: String| usage(anyhow::anyhow!(e)))?);
        }
        c.validate().map_err(usage)?;
        Ok(c)
    }
}
