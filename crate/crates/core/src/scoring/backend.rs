use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Causal,
    Seq2seq,
    Nli,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Causal => "causal",
            ModelFamily::Seq2seq => "seq2seq",
            ModelFamily::Nli => "nli",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "causal" => Ok(ModelFamily::Causal),
            "seq2seq" => Ok(ModelFamily::Seq2seq),
            "nli" => Ok(ModelFamily::Nli),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub family: ModelFamily,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    /// Connection refused, DNS failure, timeout or 5xx after all retries.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("prompt too long: {prompt_tokens} tokens exceeds limit of {max_tokens}")]
    Overflow { prompt_tokens: usize, max_tokens: usize },
    #[error("request rejected ({status} {code}): {message}")]
    Rejected { status: u16, code: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend `{backend}` has family {family} and cannot serve {request} requests")]
    FamilyMismatch {
        backend: String,
        family: ModelFamily,
        request: &'static str,
    },
    #[error("oracle: {0}")]
    Oracle(String),
}

impl BackendError {
    pub fn is_connectivity(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

/// A language model (or NLI model) that can be asked for log-probabilities.
///
/// `score_continuations` returns, for each continuation, the total
/// log-probability of that string given the prompt, summed over the
/// continuation's tokens. Implementations must be deterministic for fixed
/// inputs and safe to call from several threads.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn score_continuations(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BackendError>;

    fn count_tokens(&self, text: &str) -> Result<usize, BackendError>;

    /// Entailment log-probability of `hypothesis` given `premise`.
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError>;

    /// Number of requests worth issuing at once.
    fn max_in_flight(&self) -> usize {
        1
    }
}

pub(crate) fn require_family(
    backend: &dyn Backend,
    allowed: &[ModelFamily],
    request: &'static str,
) -> Result<(), BackendError> {
    let d = backend.descriptor();
    if allowed.contains(&d.family) {
        Ok(())
    } else {
        Err(BackendError::FamilyMismatch {
            backend: d.name.clone(),
            family: d.family,
            request,
        })
    }
}
