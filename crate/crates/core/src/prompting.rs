//! Prompt construction for boolean few-shot classification.
//!
//! Every (query, candidate label) pair becomes its own prompt:
//!
//! ```text
//! zeige mir meine wecker=>get_alarm=true
//! entferne alle wecker=>get_alarm=false
//! wecker für morgen=>get_alarm=
//! ```
//!
//! The scorer then compares the likelihood of `true` and `false` after the
//! final `=`. Seq2seq models get a trailing [`MASK_PLACEHOLDER`] which the
//! model server maps onto its own sentinel token.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::scoring::{BackendError, ModelFamily};

pub const MASK_PLACEHOLDER: &str = "[MASK]";
pub const TRUE_TOKEN: &str = "true";
pub const FALSE_TOKEN: &str = "false";
/// Bumped whenever the rendered prompt bytes change.
pub const PROMPT_FORMAT_VERSION: &str = "boolean-v1";

/// Largest K considered by the shot schedule; K must be a multiple of 10.
pub const MAX_K: usize = 40;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("query `{query_id}` does not fit the token budget on its own ({tokens} > {limit} tokens)")]
    QueryTooLong {
        query_id: String,
        tokens: usize,
        limit: usize,
    },
    #[error("invalid token budget: reserve {reserve} must be positive and below max_tokens {max_tokens}")]
    InvalidBudget { max_tokens: usize, reserve: usize },
    #[error("{0:?} backends cannot score boolean prompts")]
    UnsupportedFamily(ModelFamily),
    #[error("token counting failed: {0}")]
    TokenCount(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStrategy {
    /// pos₁, neg₁, pos₂, neg₂, …
    #[default]
    Interleaved,
    /// All positives, then all negatives.
    PositivesFirst,
}

impl fmt::Display for OrderStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderStrategy::Interleaved => "interleaved",
            OrderStrategy::PositivesFirst => "positives_first",
        })
    }
}

impl FromStr for OrderStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interleaved" => Ok(OrderStrategy::Interleaved),
            "positives_first" | "ordered" => Ok(OrderStrategy::PositivesFirst),
            other => Err(format!(
                "unknown order `{other}` (expected interleaved or positives_first)"
            )),
        }
    }
}

/// Prompt layout. Differs only in the query line suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    Causal,
    Seq2seq,
}

impl TryFrom<ModelFamily> for PromptFamily {
    type Error = PromptError;

    fn try_from(f: ModelFamily) -> Result<Self, Self::Error> {
        match f {
            ModelFamily::Causal => Ok(PromptFamily::Causal),
            ModelFamily::Seq2seq => Ok(PromptFamily::Seq2seq),
            ModelFamily::Nli => Err(PromptError::UnsupportedFamily(f)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_tokens: usize,
    pub reserve: usize,
}

impl TokenBudget {
    pub fn new(max_tokens: usize, reserve: usize) -> Result<Self, PromptError> {
        if reserve == 0 || reserve >= max_tokens {
            return Err(PromptError::InvalidBudget { max_tokens, reserve });
        }
        Ok(Self { max_tokens, reserve })
    }

    /// Tokens available to the whole prompt text.
    pub fn limit(&self) -> usize {
        self.max_tokens - self.reserve
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSelection {
    pub k: usize,
    pub positives: Vec<LabeledExample>,
    pub negatives: Vec<LabeledExample>,
    pub order_strategy: OrderStrategy,
    pub seed: u64,
    pub shortfall_pos: usize,
    pub shortfall_neg: usize,
}

impl ShotSelection {
    pub fn empty(order_strategy: OrderStrategy, seed: u64) -> Self {
        Self {
            k: 0,
            positives: Vec::new(),
            negatives: Vec::new(),
            order_strategy,
            seed,
            shortfall_pos: 0,
            shortfall_neg: 0,
        }
    }

    pub fn with_order(&self, order_strategy: OrderStrategy) -> Self {
        Self {
            order_strategy,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub query_id: String,
    pub candidate_label: String,
    pub prompt_text: String,
    pub continuations: Vec<String>,
    pub family: PromptFamily,
    pub dropped_pairs: usize,
    /// Ids of the shots kept in the prompt, in prompt order.
    pub shot_ids: Vec<String>,
}

/// `<text>=><target_label>=<true|false>\n`
pub fn render_shot_line(example: &LabeledExample, target_label: &str) -> String {
    let answer = if example.label == target_label {
        TRUE_TOKEN
    } else {
        FALSE_TOKEN
    };
    format!("{}=>{}={}\n", example.text, target_label, answer)
}

/// The unterminated line the model has to complete.
pub fn render_query_line(text: &str, target_label: &str, family: PromptFamily) -> String {
    match family {
        PromptFamily::Causal => format!("{text}=>{target_label}="),
        PromptFamily::Seq2seq => format!("{text}=>{target_label}={MASK_PLACEHOLDER}"),
    }
}

/// Mixes a run seed with a label index into an independent stream seed
/// (SplitMix64 finalizer).
pub fn shot_seed(run_seed: u64, label_index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(run_seed ^ mix(label_index as u64))
}

/// Draws up to `k` positives and up to `k` negatives uniformly without
/// replacement. The draw depends only on the pools, `k` and `seed`.
pub fn sample_shots(
    positives: &[&LabeledExample],
    negatives: &[&LabeledExample],
    k: usize,
    strategy: OrderStrategy,
    seed: u64,
) -> ShotSelection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |pool: &[&LabeledExample]| -> Vec<LabeledExample> {
        let amount = k.min(pool.len());
        index::sample(&mut rng, pool.len(), amount)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    };
    let pos = draw(positives);
    let neg = draw(negatives);
    ShotSelection {
        k,
        shortfall_pos: k - pos.len(),
        shortfall_neg: k - neg.len(),
        positives: pos,
        negatives: neg,
        order_strategy: strategy,
        seed,
    }
}

/// A shot in prompt order tagged with its truncation unit: the shot's index
/// within its own pool. Unit `i` is the pair (posᵢ, negᵢ) while both pools
/// reach that far; unpaired leftovers form one unit each.
struct PlacedShot<'a> {
    unit: usize,
    example: &'a LabeledExample,
}

fn tagged(pool: &[LabeledExample]) -> impl ExactSizeIterator<Item = PlacedShot<'_>> {
    pool.iter()
        .enumerate()
        .map(|(unit, example)| PlacedShot { unit, example })
}

fn place_shots(selection: &ShotSelection) -> Vec<PlacedShot<'_>> {
    let pos = &selection.positives;
    let neg = &selection.negatives;
    let (mut pos, mut neg) = (tagged(pos), tagged(neg));
    match selection.order_strategy {
        OrderStrategy::Interleaved => {
            let mut placed = Vec::with_capacity(pos.len() + neg.len());
            loop {
                match (pos.next(), neg.next()) {
                    (None, None) => break,
                    (p, n) => placed.extend(p.into_iter().chain(n)),
                }
            }
            placed
        }
        OrderStrategy::PositivesFirst => pos.chain(neg).collect(),
    }
}

fn unit_count(selection: &ShotSelection) -> usize {
    selection.positives.len().max(selection.negatives.len())
}

/// Builds the boolean prompt for one (query, candidate label) pair, dropping
/// whole shot pairs from the front until `token_counter` says the prompt fits
/// `budget.limit()`.
pub fn build_boolean_prompt<F>(
    selection: &ShotSelection,
    query: &LabeledExample,
    target_label: &str,
    family: PromptFamily,
    budget: &TokenBudget,
    token_counter: F,
) -> Result<PromptPlan, PromptError>
where
    F: Fn(&str) -> Result<usize, BackendError>,
{
    let placed = place_shots(selection);
    let query_line = render_query_line(&query.text, target_label, family);
    let limit = budget.limit();

    let assemble = |dropped: usize| -> (String, Vec<String>) {
        let mut text = String::new();
        let mut ids = Vec::new();
        for shot in placed.iter().filter(|s| s.unit >= dropped) {
            text.push_str(&render_shot_line(shot.example, target_label));
            ids.push(shot.example.id.clone());
        }
        text.push_str(&query_line);
        (text, ids)
    };

    let units = unit_count(selection);
    for dropped in 0..=units {
        let (prompt_text, shot_ids) = assemble(dropped);
        let tokens = token_counter(&prompt_text)?;
        if tokens <= limit {
            return Ok(PromptPlan {
                query_id: query.id.clone(),
                candidate_label: target_label.to_string(),
                prompt_text,
                continuations: vec![TRUE_TOKEN.to_string(), FALSE_TOKEN.to_string()],
                family,
                dropped_pairs: dropped,
                shot_ids,
            });
        }
        if dropped == units {
            return Err(PromptError::QueryTooLong {
                query_id: query.id.clone(),
                tokens,
                limit,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// `Q: Is '<label>' the intent of '<text>'? A:` with no escaping.
pub fn build_qa_prompt(query: &LabeledExample, target_label: &str, family: PromptFamily) -> PromptPlan {
    PromptPlan {
        query_id: query.id.clone(),
        candidate_label: target_label.to_string(),
        prompt_text: format!("Q: Is '{target_label}' the intent of '{}'? A:", query.text),
        continuations: vec![TRUE_TOKEN.to_string(), FALSE_TOKEN.to_string()],
        family,
        dropped_pairs: 0,
        shot_ids: Vec::new(),
    }
}

/// Shot counts to sweep: `0`, `5`, then every multiple of ten up to the
/// largest K ≤ 40 whose prompt still fits the budget.
pub fn select_k_schedule(
    budget: &TokenBudget,
    longest_shot_pair_tokens: usize,
    longest_query_tokens: usize,
) -> Vec<usize> {
    let fits = |k: usize| {
        k.saturating_mul(longest_shot_pair_tokens)
            .saturating_add(longest_query_tokens)
            .saturating_add(budget.reserve)
            <= budget.max_tokens
    };
    let largest = (10..=MAX_K).step_by(10).filter(|&k| fits(k)).max();
    match largest {
        Some(k_max) => [0, 5].into_iter().chain((10..=k_max).step_by(10)).collect(),
        None if fits(5) => vec![0, 5],
        None => vec![0],
    }
}
