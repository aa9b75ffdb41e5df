//! Maximum-confidence prediction over per-label boolean prompts, and the
//! entailment-based zero-shot alternative.

mod backend;
pub mod oracle;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use backend::{Backend, BackendDescriptor, BackendError, ModelFamily};
pub use oracle::{make_oracle, OracleConfig, OracleKind};

use crate::corpus::LabelRegistry;
use crate::prompting::PromptPlan;

/// Placeholder substituted with each candidate label in entailment hypotheses.
pub const LABEL_PLACEHOLDER: &str = "{label}";
pub const DEFAULT_HYPOTHESIS_TEMPLATE: &str = "the intent is {label}";

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("non-finite log-probabilities ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("non-finite entailment score {score} for label `{label}`")]
    NonFiniteEntailment { label: String, score: f64 },
    #[error("backend returned {got} scores for {expected} continuations")]
    Misaligned { expected: usize, got: usize },
    #[error("prompt plans for query `{query_id}` do not cover the label registry: {detail}")]
    Coverage { query_id: String, detail: String },
    #[error("hypothesis template `{0}` lacks the {{label}} placeholder")]
    MissingPlaceholder(String),
}

/// Probability of `true` normalized over {true, false}, computed as the
/// logistic of the log-probability difference. Clamped to the open interval
/// (0, 1) so that finite inputs never saturate.
pub fn confidence(logprob_true: f64, logprob_false: f64) -> Result<f64, ScoringError> {
    if !logprob_true.is_finite() || !logprob_false.is_finite() {
        return Err(ScoringError::NonFinite(logprob_true, logprob_false));
    }
    let d = logprob_true - logprob_false;
    let p = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    };
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BooleanScore {
    pub logprob_true: f64,
    pub logprob_false: f64,
    pub confidence: f64,
}

impl BooleanScore {
    pub fn from_logprobs(logprob_true: f64, logprob_false: f64) -> Result<Self, ScoringError> {
        Ok(Self {
            logprob_true,
            logprob_false,
            confidence: confidence(logprob_true, logprob_false)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScore {
    Boolean(BooleanScore),
    Entailment { entail_logprob: f64 },
}

impl LabelScore {
    /// The quantity maximized over labels.
    pub fn value(&self) -> f64 {
        match self {
            LabelScore::Boolean(b) => b.confidence,
            LabelScore::Entailment { entail_logprob } => *entail_logprob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub gold_label: String,
    pub per_label: BTreeMap<String, LabelScore>,
    pub predicted_label: String,
    pub dropped_pairs_max: usize,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.gold_label
    }
}

/// Index of the first maximum; earlier registry entries win ties.
fn argmax<'a>(registry: &'a LabelRegistry, per_label: &BTreeMap<String, LabelScore>) -> &'a str {
    let mut best: Option<(&str, f64)> = None;
    for label in registry.iter() {
        let v = per_label[label].value();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((label, v));
        }
    }
    best.map(|(l, _)| l).expect("registry has at least two labels")
}

/// Scores each continuation after `prompt`, checking the backend family and
/// that the result is aligned with `continuations`.
pub fn score_continuations(
    backend: &dyn Backend,
    prompt: &str,
    continuations: &[String],
) -> Result<Vec<f64>, ScoringError> {
    backend::require_family(
        backend,
        &[ModelFamily::Causal, ModelFamily::Seq2seq],
        "continuation scoring",
    )?;
    let scores = backend.score_continuations(prompt, continuations)?;
    if scores.len() != continuations.len() {
        return Err(ScoringError::Misaligned {
            expected: continuations.len(),
            got: scores.len(),
        });
    }
    Ok(scores)
}

/// Scores one boolean prompt per registry label and predicts the label whose
/// prompt gives `true` the highest normalized probability.
pub fn max_confidence_predict(
    backend: &dyn Backend,
    plans: &[PromptPlan],
    registry: &LabelRegistry,
    gold_label: &str,
) -> Result<PredictionRecord, ScoringError> {
    let query_id = plans.first().map(|p| p.query_id.clone()).unwrap_or_default();
    let coverage = |detail: String| ScoringError::Coverage {
        query_id: query_id.clone(),
        detail,
    };
    if let Some(p) = plans.iter().find(|p| p.query_id != query_id) {
        return Err(coverage(format!("mixed query ids `{query_id}` and `{}`", p.query_id)));
    }
    let mut seen = HashSet::new();
    for p in plans {
        if !registry.contains(&p.candidate_label) {
            return Err(coverage(format!("unknown label `{}`", p.candidate_label)));
        }
        if !seen.insert(p.candidate_label.as_str()) {
            return Err(coverage(format!("duplicate label `{}`", p.candidate_label)));
        }
    }
    if seen.len() != registry.len() {
        let missing: Vec<&str> = registry.iter().filter(|l| !seen.contains(l)).collect();
        return Err(coverage(format!("missing labels {missing:?}")));
    }

    let mut per_label = BTreeMap::new();
    for plan in plans {
        let scores = score_continuations(backend, &plan.prompt_text, &plan.continuations)?;
        let score = BooleanScore::from_logprobs(scores[0], scores[1])?;
        per_label.insert(plan.candidate_label.clone(), LabelScore::Boolean(score));
    }
    let predicted_label = argmax(registry, &per_label).to_string();
    Ok(PredictionRecord {
        query_id,
        gold_label: gold_label.to_string(),
        per_label,
        predicted_label,
        dropped_pairs_max: plans.iter().map(|p| p.dropped_pairs).max().unwrap_or(0),
    })
}

/// Zero-shot prediction with an NLI model: the query is the premise and each
/// label is inserted into `hypothesis_template`.
pub fn entailment_predict(
    backend: &dyn Backend,
    query_id: &str,
    query_text: &str,
    gold_label: &str,
    registry: &LabelRegistry,
    hypothesis_template: &str,
) -> Result<PredictionRecord, ScoringError> {
    backend::require_family(backend, &[ModelFamily::Nli], "entailment")?;
    if !hypothesis_template.contains(LABEL_PLACEHOLDER) {
        return Err(ScoringError::MissingPlaceholder(hypothesis_template.to_string()));
    }
    let mut per_label = BTreeMap::new();
    for label in registry.iter() {
        let hypothesis = hypothesis_template.replace(LABEL_PLACEHOLDER, label);
        let score = backend.entail(query_text, &hypothesis)?;
        if !score.is_finite() {
            return Err(ScoringError::NonFiniteEntailment {
                label: label.to_string(),
                score,
            });
        }
        per_label.insert(label.to_string(), LabelScore::Entailment { entail_logprob: score });
    }
    let predicted_label = argmax(registry, &per_label).to_string();
    Ok(PredictionRecord {
        query_id: query_id.to_string(),
        gold_label: gold_label.to_string(),
        per_label,
        predicted_label,
        dropped_pairs_max: 0,
    })
}
