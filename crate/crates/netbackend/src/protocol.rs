//! Wire types for the model-server protocol. Field order matches the
//! serialized byte layout.

use serde::{Deserialize, Serialize};

use icx_core::scoring::ModelFamily;

pub const MODELS_PATH: &str = "/v1/models";
pub const SCORE_PATH: &str = "/v1/score";
pub const COUNT_TOKENS_PATH: &str = "/v1/count_tokens";
pub const ENTAIL_PATH: &str = "/v1/entail";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub family: ModelFamily,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsResponse {
    pub models: Vec<ModelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub continuations: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub logprobs: Vec<f64>,
    pub prompt_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountTokensRequest<'a> {
    pub model: &'a str,
    pub text: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTokensResponse {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntailRequest<'a> {
    pub model: &'a str,
    pub premise: &'a str,
    pub hypothesis: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLogprobs {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailResponse {
    pub entail_logprob: f64,
    pub class_logprobs: ClassLogprobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    /// Servers may attach token counts to `overflow` errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}
