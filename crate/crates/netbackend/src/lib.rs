//! HTTP/JSON client for model servers speaking the `/v1` scoring protocol.
//!
//! [`Client`] handles caching, bounded concurrency and retries;
//! [`HttpBackend`] adapts one served model to the [`Backend`] trait.

pub mod cache;
mod client;
pub mod protocol;
#[cfg(feature = "testkit")]
pub mod testkit;

use std::sync::Arc;

use icx_core::scoring::{Backend, BackendDescriptor, BackendError};

pub use cache::{CacheKey, CacheStats, CachedValue, Endpoint, ResponseCache};
pub use client::{Client, ServerConfig, ENV_API_KEY, ENV_SERVER_URL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("{endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint}: HTTP {status} {code}: {message}")]
    Status {
        endpoint: String,
        status: u16,
        code: String,
        message: String,
        prompt_tokens: Option<usize>,
        max_tokens: Option<usize>,
    },
    #[error("{endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("model `{0}` is not served")]
    UnknownModel(String),
    #[error("invalid server config: {0}")]
    Config(String),
}

impl NetError {
    pub fn is_connectivity(&self) -> bool {
        matches!(self, NetError::Transport { .. })
    }
}

impl From<NetError> for BackendError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Transport { .. } => BackendError::Unavailable(e.to_string()),
            NetError::Status {
                prompt_tokens: Some(prompt_tokens),
                max_tokens: Some(max_tokens),
                ..
            } => BackendError::Overflow {
                prompt_tokens,
                max_tokens,
            },
            NetError::Status {
                status, code, message, ..
            } => BackendError::Rejected { status, code, message },
            other => BackendError::Protocol(other.to_string()),
        }
    }
}

/// One model on a remote server.
pub struct HttpBackend {
    client: Arc<Client>,
    descriptor: BackendDescriptor,
}

impl HttpBackend {
    /// Looks `model` up via `GET /v1/models`.
    pub fn connect(client: Arc<Client>, model: &str) -> Result<Self, NetError> {
        let descriptor = client
            .list_models()?
            .into_iter()
            .find(|d| d.name == model)
            .ok_or_else(|| NetError::UnknownModel(model.to_string()))?;
        Ok(Self { client, descriptor })
    }

    pub fn client(&self) -> &Client {
        &self.client
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_continuations(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(self.client.remote_score(&self.descriptor.name, prompt, continuations)?)
    }

    fn count_tokens(&self, text: &str) -> Result<usize, BackendError> {
        Ok(self.client.remote_count_tokens(&self.descriptor.name, text)?)
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        Ok(self.client.remote_entail(&self.descriptor.name, premise, hypothesis)?)
    }

    fn max_in_flight(&self) -> usize {
        self.client.config().max_in_flight
    }
}
