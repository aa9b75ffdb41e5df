//! Experiment orchestration: K planning, seeded k-sweeps, zero-shot modes and
//! report aggregation.

mod metrics;
mod report;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

pub use metrics::{accuracy, macro_f1, mean_std, RunMetrics};
pub use report::{CellFailure, CellSummary, EvalReport, Provenance, ReportError, ReportFormat, ARTIFACT_VERSION};

use crate::config::{EvalMode, ExperimentConfig};
use crate::corpus::{LabeledExample, Split, TaskSpec};
use crate::prompting::{
    build_boolean_prompt, build_qa_prompt, render_query_line, sample_shots, select_k_schedule, shot_seed, PromptError,
    PromptFamily, PromptPlan, ShotSelection, TokenBudget, FALSE_TOKEN, PROMPT_FORMAT_VERSION,
};
use crate::scoring::{
    entailment_predict, max_confidence_predict, Backend, ModelFamily, PredictionRecord, ScoringError,
};

/// Split that supplies shots.
pub const SHOT_SPLIT: Split = Split::Train;
/// Split that supplies queries.
pub const QUERY_SPLIT: Split = Split::Test;
/// Extra tokens reserved on top of the longest query line by default.
pub const RESERVE_MARGIN: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("{0}")]
    Plan(String),
    #[error("cannot write {path}: {source}")]
    Dump {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    /// True when the failure is the backend being unreachable rather than a
    /// bad request or bad data.
    pub fn is_connectivity(&self) -> bool {
        match self {
            EvalError::Prompt(PromptError::TokenCount(e)) => e.is_connectivity(),
            EvalError::Scoring(ScoringError::Backend(e)) => e.is_connectivity(),
            _ => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("cell k={k} seed={seed} failed after {completed_queries} queries: {source}")]
pub struct CellError {
    pub k: usize,
    pub seed: u64,
    pub completed_queries: usize,
    #[source]
    pub source: EvalError,
}

/// Budget and shot schedule derived from the backend and the corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPlan {
    pub mode: EvalMode,
    pub family: ModelFamily,
    pub max_tokens: usize,
    pub budget: Option<TokenBudget>,
    pub longest_shot_pair_tokens: usize,
    pub longest_query_tokens: usize,
    pub k_values: Vec<usize>,
    pub n_queries: usize,
    /// True when no k above 0 fits and the schedule fell back to `[0]`.
    pub k_fallback: bool,
}

impl ResolvedPlan {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "backend family: {}, max_tokens: {}", self.family, self.max_tokens);
        if let Some(b) = &self.budget {
            let _ = writeln!(s, "token budget: reserve {} → prompt limit {}", b.reserve, b.limit());
            let _ = writeln!(
                s,
                "longest shot pair: {} tokens, longest query line: {} tokens",
                self.longest_shot_pair_tokens, self.longest_query_tokens
            );
        }
        let _ = writeln!(s, "queries per run: {}", self.n_queries);
        let ks: Vec<String> = self.k_values.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "k schedule: [{}]", ks.join(","));
        if self.k_fallback {
            let _ = writeln!(s, "warning: no k > 0 fits the context window; running zero-shot only");
        }
        s
    }
}

/// Output of one (k, seed) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub metrics: RunMetrics,
    pub records: Vec<PredictionRecord>,
}

/// Called with every prompt evaluated in a cell; used for prompt dumps.
pub type PromptSink<'a> = dyn Fn(usize, u64, usize, usize, &PromptPlan) -> Result<(), EvalError> + Sync + 'a;

pub struct Runner<'a> {
    task: &'a TaskSpec,
    backend: &'a dyn Backend,
    config: &'a ExperimentConfig,
    pool: rayon::ThreadPool,
    prompt_sink: Option<Box<PromptSink<'a>>>,
}

impl<'a> Runner<'a> {
    pub fn new(task: &'a TaskSpec, backend: &'a dyn Backend, config: &'a ExperimentConfig) -> Self {
        Self::with_workers(task, backend, config, backend.max_in_flight())
    }

    pub fn with_workers(
        task: &'a TaskSpec,
        backend: &'a dyn Backend,
        config: &'a ExperimentConfig,
        workers: usize,
    ) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        Self {
            task,
            backend,
            config,
            pool,
            prompt_sink: None,
        }
    }

    pub fn on_prompt(mut self, sink: Box<PromptSink<'a>>) -> Self {
        self.prompt_sink = Some(sink);
        self
    }

    /// Writes every prompt as JSON under `dir/k<k>_seed<seed>/`.
    pub fn dump_prompts_to(self, dir: &'a Path) -> Self {
        self.on_prompt(Box::new(move |k, seed, qi, li, plan| {
            write_prompt(dir, k, seed, qi, li, plan)
        }))
    }

    fn queries(&self) -> Vec<&'a LabeledExample> {
        let mut q = self.task.target().split_view(QUERY_SPLIT);
        if let Some(limit) = self.config.query_limit {
            q.truncate(limit);
        }
        q
    }

    fn longest_label(&self) -> &'a str {
        self.task
            .registry()
            .iter()
            .max_by_key(|l| l.len())
            .expect("registry is non-empty")
    }

    pub fn plan(&self) -> Result<ResolvedPlan, EvalError> {
        let desc = self.backend.descriptor();
        let queries = self.queries();
        if queries.is_empty() {
            return Err(EvalError::Plan(format!(
                "target corpus `{}` has no {QUERY_SPLIT} examples",
                self.task.target().name()
            )));
        }
        let mut plan = ResolvedPlan {
            mode: self.config.mode,
            family: desc.family,
            max_tokens: desc.max_tokens,
            budget: None,
            longest_shot_pair_tokens: 0,
            longest_query_tokens: 0,
            k_values: vec![0],
            n_queries: queries.len(),
            k_fallback: false,
        };
        match self.config.mode {
            EvalMode::ZeroshotEntail => {
                if desc.family != ModelFamily::Nli {
                    return Err(EvalError::Plan(format!(
                        "entailment mode needs an nli backend; `{}` is {}",
                        desc.name, desc.family
                    )));
                }
                return Ok(plan);
            }
            EvalMode::ZeroshotQa => {
                PromptFamily::try_from(desc.family)?;
                return Ok(plan);
            }
            EvalMode::FewshotBoolean => {}
        }

        let family = PromptFamily::try_from(desc.family)?;
        let count = |t: &str| self.backend.count_tokens(t).map_err(PromptError::from);
        let label = self.longest_label();
        let mut longest_query = 0;
        for q in &queries {
            longest_query = longest_query.max(count(&render_query_line(&q.text, label, family))?);
        }
        let mut longest_line = 0;
        for ex in self.task.source().split_view(SHOT_SPLIT) {
            longest_line = longest_line.max(count(&format!("{}=>{}={}\n", ex.text, label, FALSE_TOKEN))?);
        }
        let reserve = self.config.reserve.unwrap_or(longest_query + RESERVE_MARGIN);
        let budget = TokenBudget::new(desc.max_tokens, reserve)?;
        plan.budget = Some(budget);
        plan.longest_query_tokens = longest_query;
        plan.longest_shot_pair_tokens = 2 * longest_line;
        plan.k_values = match &self.config.k_values {
            Some(ks) => ks.clone(),
            None => select_k_schedule(&budget, plan.longest_shot_pair_tokens, longest_query),
        };
        plan.k_fallback = self.config.k_values.is_none() && plan.k_values == [0];
        if self.task.source().split_view(SHOT_SPLIT).is_empty() && plan.k_values.iter().any(|&k| k > 0) {
            return Err(EvalError::Plan(format!(
                "source corpus `{}` has no {SHOT_SPLIT} examples to draw shots from",
                self.task.source().name()
            )));
        }
        Ok(plan)
    }

    /// Per-label shot selections for one run, seeded by (seed, label index).
    pub fn shot_selections(&self, k: usize, seed: u64) -> Vec<ShotSelection> {
        let source = self.task.source();
        self.task
            .registry()
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let (pos, neg) = source
                    .label_pools(SHOT_SPLIT, label)
                    .expect("task registries are identical");
                sample_shots(&pos, &neg, k, self.config.order_strategy, shot_seed(seed, i))
            })
            .collect()
    }

    /// Evaluates every query once at shot count `k` with shots drawn by `seed`.
    pub fn run_cell(&self, plan: &ResolvedPlan, k: usize, seed: u64) -> Result<CellOutcome, CellError> {
        let registry = self.task.registry();
        let queries = self.queries();
        let selections = match self.config.mode {
            EvalMode::FewshotBoolean => self.shot_selections(k, seed),
            _ => Vec::new(),
        };
        let abort = AtomicBool::new(false);

        let evaluate = |qi: usize, query: &LabeledExample| -> Result<PredictionRecord, EvalError> {
            match self.config.mode {
                EvalMode::ZeroshotEntail => Ok(entailment_predict(
                    self.backend,
                    &query.id,
                    &query.text,
                    &query.label,
                    registry,
                    &self.config.hypothesis_template,
                )?),
                mode => {
                    let family = PromptFamily::try_from(plan.family)?;
                    let mut plans = Vec::with_capacity(registry.len());
                    for (li, label) in registry.iter().enumerate() {
                        let p = match mode {
                            EvalMode::ZeroshotQa => build_qa_prompt(query, label, family),
                            _ => {
                                let budget = plan.budget.as_ref().expect("few-shot plan has a budget");
                                build_boolean_prompt(&selections[li], query, label, family, budget, |t| {
                                    self.backend.count_tokens(t)
                                })?
                            }
                        };
                        if let Some(sink) = &self.prompt_sink {
                            sink(k, seed, qi, li, &p)?;
                        }
                        plans.push(p);
                    }
                    Ok(max_confidence_predict(self.backend, &plans, registry, &query.label)?)
                }
            }
        };

        let results: Vec<Option<Result<PredictionRecord, EvalError>>> = self.pool.install(|| {
            queries
                .par_iter()
                .enumerate()
                .map(|(qi, q)| {
                    if abort.load(Ordering::Relaxed) {
                        return None;
                    }
                    let r = evaluate(qi, q);
                    if r.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    Some(r)
                })
                .collect()
        });

        let mut records = Vec::with_capacity(results.len());
        let mut first_error = None;
        for r in results.into_iter().flatten() {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(source) = first_error {
            return Err(CellError {
                k,
                seed,
                completed_queries: records.len(),
                source,
            });
        }
        let metrics = RunMetrics::from_records(seed, k, &records, registry);
        Ok(CellOutcome { metrics, records })
    }

    /// Runs every (k, seed) cell of the plan. Failed cells are recorded in
    /// the report instead of aborting the sweep, except for connectivity
    /// failures, which are returned immediately.
    pub fn run_sweep(
        &self,
        plan: &ResolvedPlan,
        mut on_cell: impl FnMut(&CellOutcome),
    ) -> Result<EvalReport, CellError> {
        let k_values: Vec<usize> = if self.config.mode.is_zeroshot() {
            vec![0]
        } else {
            plan.k_values.clone()
        };
        let mut cells = BTreeMap::new();
        let mut failures = Vec::new();
        for &k in &k_values {
            let mut runs = Vec::with_capacity(self.config.seeds.len());
            for &seed in &self.config.seeds {
                match self.run_cell(plan, k, seed) {
                    Ok(outcome) => {
                        on_cell(&outcome);
                        runs.push(outcome.metrics);
                    }
                    Err(e) if e.source.is_connectivity() => return Err(e),
                    Err(e) => failures.push(CellFailure {
                        k,
                        seed,
                        completed_queries: e.completed_queries,
                        message: e.source.to_string(),
                    }),
                }
            }
            if !runs.is_empty() {
                cells.insert(k, CellSummary::from_runs(runs));
            }
        }
        Ok(EvalReport {
            config_echo: self.resolved_config(plan),
            cells,
            failures,
            provenance: self.provenance(plan),
        })
    }

    /// Zero-shot run: a single k=0 cell per seed.
    pub fn run_zeroshot(
        &self,
        plan: &ResolvedPlan,
        on_cell: impl FnMut(&CellOutcome),
    ) -> Result<EvalReport, CellError> {
        if !self.config.mode.is_zeroshot() {
            return Err(CellError {
                k: 0,
                seed: 0,
                completed_queries: 0,
                source: EvalError::Plan(format!("mode {} is not a zero-shot mode", self.config.mode)),
            });
        }
        self.run_sweep(plan, on_cell)
    }

    fn resolved_config(&self, plan: &ResolvedPlan) -> ExperimentConfig {
        let mut c = self.config.clone();
        if !c.mode.is_zeroshot() {
            c.k_values = Some(plan.k_values.clone());
            c.reserve = plan.budget.map(|b| b.reserve);
        }
        c
    }

    fn provenance(&self, plan: &ResolvedPlan) -> Provenance {
        let desc = self.backend.descriptor();
        Provenance {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            backend: desc.name.clone(),
            backend_family: desc.family.to_string(),
            max_tokens: desc.max_tokens,
            artifact_version: ARTIFACT_VERSION.to_string(),
            prompt_format_version: match self.config.mode {
                EvalMode::FewshotBoolean => PROMPT_FORMAT_VERSION.to_string(),
                EvalMode::ZeroshotQa => "qa-v1".to_string(),
                EvalMode::ZeroshotEntail => "entail-v1".to_string(),
            },
            f1_variant: "macro".to_string(),
            source_corpus: format!("{} ({})", self.task.source().name(), self.task.source().language()),
            target_corpus: format!("{} ({})", self.task.target().name(), self.task.target().language()),
            hypothesis_template: (self.config.mode == EvalMode::ZeroshotEntail)
                .then(|| self.config.hypothesis_template.clone()),
            token_budget_reserve: plan.budget.map(|b| b.reserve),
        }
    }
}

fn write_prompt(dir: &Path, k: usize, seed: u64, qi: usize, li: usize, plan: &PromptPlan) -> Result<(), EvalError> {
    let sub = dir.join(format!("k{k}_seed{seed}"));
    let path = sub.join(format!("{qi:06}_{li:03}.json"));
    let err = |source| EvalError::Dump {
        path: path.clone(),
        source,
    };
    std::fs::create_dir_all(&sub).map_err(err)?;
    let body = serde_json::to_string_pretty(plan).expect("prompt plan serializes");
    std::fs::write(&path, body).map_err(err)
}

/// JSONL, one prediction record per line.
pub fn predictions_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
