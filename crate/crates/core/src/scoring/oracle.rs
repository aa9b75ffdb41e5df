//! Deterministic in-process backends for offline runs and tests.
//!
//! All oracles count tokens as whitespace-separated words and refuse prompts
//! longer than their `max_tokens`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendDescriptor, BackendError, ModelFamily};
use crate::prompting::MASK_PLACEHOLDER;

const LOG_HIT: f64 = -0.105_360_515_657_826_3; // ln 0.9
const LOG_MISS: f64 = -std::f64::consts::LN_10; // ln 0.1

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// log 0.5 for every continuation.
    Uniform,
    /// Knows the gold label of every utterance.
    Memorizing,
    /// Pseudo-random logprobs in [-5, 0] from a seeded hash.
    Hash,
    /// NLI: 1 when the hypothesis names the gold label, else 0.
    NliGold,
    /// NLI: the same score for every hypothesis.
    NliConstant,
}

impl OracleKind {
    pub fn family_default(self) -> ModelFamily {
        match self {
            OracleKind::NliGold | OracleKind::NliConstant => ModelFamily::Nli,
            _ => ModelFamily::Causal,
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Uniform => "uniform",
            OracleKind::Memorizing => "memorizing",
            OracleKind::Hash => "hash",
            OracleKind::NliGold => "nli_gold",
            OracleKind::NliConstant => "nli_constant",
        })
    }
}

impl FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "uniform" => Ok(OracleKind::Uniform),
            "memorizing" => Ok(OracleKind::Memorizing),
            "hash" => Ok(OracleKind::Hash),
            "nli_gold" => Ok(OracleKind::NliGold),
            "nli_constant" => Ok(OracleKind::NliConstant),
            _ => Err(format!(
                "unknown oracle `{s}` (expected uniform, memorizing, hash, nli_gold or nli_constant)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub family: ModelFamily,
    pub max_tokens: usize,
    pub seed: u64,
    /// Utterance text → gold label, for the memorizing and NLI-gold oracles.
    pub gold: HashMap<String, String>,
    pub constant_score: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Causal,
            max_tokens: 1024,
            seed: 0,
            gold: HashMap::new(),
            constant_score: 0.0,
        }
    }
}

pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

struct Oracle {
    kind: OracleKind,
    descriptor: BackendDescriptor,
    config: OracleConfig,
}

pub fn make_oracle(kind: OracleKind, config: OracleConfig) -> Arc<dyn Backend> {
    Arc::new(Oracle {
        kind,
        descriptor: BackendDescriptor {
            name: format!("oracle:{kind}"),
            family: config.family,
            max_tokens: config.max_tokens,
        },
        config,
    })
}

/// Extracts (utterance, candidate label) from the last line of a boolean or
/// QA prompt.
pub fn parse_query_line(prompt: &str) -> Option<(&str, &str)> {
    let last = prompt.rsplit('\n').next()?;
    if let Some(rest) = last.strip_prefix("Q: Is '").and_then(|r| r.strip_suffix("'? A:")) {
        let (label, text) = rest.split_once("' the intent of '")?;
        return Some((text, label));
    }
    let last = last.strip_suffix(MASK_PLACEHOLDER).unwrap_or(last);
    last.strip_suffix('=')?.rsplit_once("=>")
}

fn hash_logprob(seed: u64, prompt: &str, continuation: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((prompt.len() as u64).to_le_bytes());
    h.update(prompt.as_bytes());
    h.update(continuation.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    -5.0 * (u64::from_le_bytes(word) as f64 / u64::MAX as f64)
}

impl Oracle {
    fn check_length(&self, text: &str) -> Result<(), BackendError> {
        let n = whitespace_tokens(text);
        if n > self.descriptor.max_tokens {
            return Err(BackendError::Overflow {
                prompt_tokens: n,
                max_tokens: self.descriptor.max_tokens,
            });
        }
        Ok(())
    }

    fn mismatch(&self, request: &'static str) -> BackendError {
        BackendError::FamilyMismatch {
            backend: self.descriptor.name.clone(),
            family: self.descriptor.family,
            request,
        }
    }
}

impl Backend for Oracle {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_continuations(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BackendError> {
        if self.descriptor.family == ModelFamily::Nli
            || matches!(self.kind, OracleKind::NliGold | OracleKind::NliConstant)
        {
            return Err(self.mismatch("continuation scoring"));
        }
        self.check_length(prompt)?;
        match self.kind {
            OracleKind::Uniform => Ok(vec![0.5f64.ln(); continuations.len()]),
            OracleKind::Hash => Ok(continuations
                .iter()
                .map(|c| hash_logprob(self.config.seed, prompt, c))
                .collect()),
            OracleKind::Memorizing => {
                let (text, label) = parse_query_line(prompt)
                    .ok_or_else(|| BackendError::Oracle("cannot parse the prompt's final line".into()))?;
                let hit = self.config.gold.get(text).is_some_and(|g| g == label);
                Ok(continuations
                    .iter()
                    .map(|c| match (c.as_str(), hit) {
                        ("true", true) | ("false", false) => LOG_HIT,
                        _ => LOG_MISS,
                    })
                    .collect())
            }
            OracleKind::NliGold | OracleKind::NliConstant => unreachable!(),
        }
    }

    fn count_tokens(&self, text: &str) -> Result<usize, BackendError> {
        Ok(whitespace_tokens(text))
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        if self.descriptor.family != ModelFamily::Nli {
            return Err(self.mismatch("entailment"));
        }
        match self.kind {
            OracleKind::NliConstant => Ok(self.config.constant_score),
            OracleKind::NliGold => {
                let gold = self.config.gold.get(premise);
                let named = gold.is_some_and(|g| hypothesis.split_whitespace().any(|w| w == g));
                Ok(if named { 1.0 } else { 0.0 })
            }
            _ => Err(self.mismatch("entailment")),
        }
    }

    fn max_in_flight(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}
