use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::de::DeserializeOwned;
use serde::Serialize;

use icx_core::scoring::BackendDescriptor;

use crate::cache::{CacheKey, CacheStats, CachedValue, Endpoint, ResponseCache, DEFAULT_CACHE_ENTRIES};
use crate::protocol::*;
use crate::NetError;

pub const ENV_SERVER_URL: &str = "ICX_SERVER_URL";
pub const ENV_API_KEY: &str = "ICX_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub retry_backoff: Duration,
    pub cache_entries: usize,
    pub cache_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_in_flight: 8,
            max_retries: 2,
            retry_backoff: Duration::from_secs(1),
            cache_entries: DEFAULT_CACHE_ENTRIES,
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.base_url.trim().is_empty() {
            return Err(NetError::Config("base_url must not be empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(NetError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding requests on the wire.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Retry(NetError),
    Fatal(NetError),
}

/// Blocking client for the model-server protocol. Safe to share between
/// threads; concurrent calls beyond `max_in_flight` wait for a slot.
pub struct Client {
    config: ServerConfig,
    agent: ureq::Agent,
    cache: Option<ResponseCache>,
    slots: Slots,
    requests_sent: AtomicU64,
}

impl Client {
    pub fn new(config: ServerConfig) -> Result<Self, NetError> {
        Self::build(config, true)
    }

    pub fn without_cache(config: ServerConfig) -> Result<Self, NetError> {
        Self::build(config, false)
    }

    fn build(config: ServerConfig, cached: bool) -> Result<Self, NetError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            cache: cached.then(|| ResponseCache::new(config.cache_entries, config.cache_dir.clone())),
            slots: Slots::new(config.max_in_flight),
            agent,
            config,
            requests_sent: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    pub fn cache_stats(&self) -> Option<CacheStats> {
        self.cache.as_ref().map(ResponseCache::stats)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn once(&self, path: &str, body: Option<&str>) -> Result<(u16, String), Attempt> {
        let url = self.url(path);
        let _slot = self.slots.acquire();
        self.requests_sent.fetch_add(1, Ordering::Relaxed);
        let auth = self.config.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let result = match body {
            None => {
                let mut req = self.agent.get(&url);
                if let Some(a) = &auth {
                    req = req.header("authorization", a);
                }
                req.call()
            }
            Some(b) => {
                let mut req = self.agent.post(&url).header("content-type", "application/json");
                if let Some(a) = &auth {
                    req = req.header("authorization", a);
                }
                req.send(b)
            }
        };
        let mut resp = result.map_err(|e| {
            Attempt::Retry(NetError::Transport {
                endpoint: path.to_string(),
                message: e.to_string(),
            })
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| {
            Attempt::Retry(NetError::Transport {
                endpoint: path.to_string(),
                message: format!("reading response body: {e}"),
            })
        })?;
        match status {
            200..=299 => Ok((status, text)),
            400..=499 => Err(Attempt::Fatal(status_error(path, status, &text))),
            _ => Err(Attempt::Retry(status_error(path, status, &text))),
        }
    }

    /// Sends one request, retrying transport failures and 5xx responses with
    /// exponential backoff. Returns the raw response body.
    pub fn send_raw(&self, path: &str, body: Option<&str>) -> Result<String, NetError> {
        let mut delay = self.config.retry_backoff;
        let mut attempt = 0;
        loop {
            match self.once(path, body) {
                Ok((_, text)) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.config.max_retries {
                        return Err(e);
                    }
                    log::warn!("{e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn request<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, NetError> {
        let body = serde_json::to_string(body).expect("request serializes");
        let text = self.send_raw(path, Some(&body))?;
        parse(path, &text)
    }

    fn cached<T>(
        &self,
        key: CacheKey,
        unwrap: impl Fn(CachedValue) -> Option<T>,
        fetch: impl FnOnce() -> Result<(T, CachedValue), NetError>,
    ) -> Result<T, NetError> {
        if let Some(cache) = &self.cache {
            if let Some(v) = cache.get(&key).and_then(&unwrap) {
                return Ok(v);
            }
        }
        let (value, stored) = fetch()?;
        if let Some(cache) = &self.cache {
            cache.insert(key, stored);
        }
        Ok(value)
    }

    pub fn list_models(&self) -> Result<Vec<BackendDescriptor>, NetError> {
        let text = self.send_raw(MODELS_PATH, None)?;
        let resp: ModelsResponse = parse(MODELS_PATH, &text)?;
        if resp.models.is_empty() {
            log::warn!("server at {} serves no models", self.config.base_url);
        }
        Ok(resp
            .models
            .into_iter()
            .map(|m| BackendDescriptor {
                name: m.name,
                family: m.family,
                max_tokens: m.max_tokens,
            })
            .collect())
    }

    /// Summed log-probability of each continuation given `prompt`.
    pub fn remote_score(&self, model: &str, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, NetError> {
        let refs: Vec<&str> = continuations.iter().map(String::as_str).collect();
        let key = CacheKey::new(Endpoint::Score, model, prompt, &refs);
        self.cached(
            key,
            |v| match v {
                CachedValue::Logprobs(l) => Some(l),
                _ => None,
            },
            || {
                let resp: ScoreResponse = self.request(
                    SCORE_PATH,
                    &ScoreRequest {
                        model,
                        prompt,
                        continuations,
                    },
                )?;
                if resp.logprobs.len() != continuations.len() {
                    return Err(NetError::Protocol {
                        endpoint: SCORE_PATH.to_string(),
                        message: format!(
                            "{} logprobs for {} continuations",
                            resp.logprobs.len(),
                            continuations.len()
                        ),
                    });
                }
                Ok((resp.logprobs.clone(), CachedValue::Logprobs(resp.logprobs)))
            },
        )
    }

    pub fn remote_count_tokens(&self, model: &str, text: &str) -> Result<usize, NetError> {
        let key = CacheKey::new(Endpoint::CountTokens, model, text, &[]);
        self.cached(
            key,
            |v| match v {
                CachedValue::Count(n) => Some(n),
                _ => None,
            },
            || {
                let resp: CountTokensResponse = self.request(COUNT_TOKENS_PATH, &CountTokensRequest { model, text })?;
                Ok((resp.count, CachedValue::Count(resp.count)))
            },
        )
    }

    pub fn remote_entail(&self, model: &str, premise: &str, hypothesis: &str) -> Result<f64, NetError> {
        let key = CacheKey::new(Endpoint::Entail, model, premise, &[hypothesis]);
        self.cached(
            key,
            |v| match v {
                CachedValue::Entail(x) => Some(x),
                _ => None,
            },
            || {
                let resp: EntailResponse = self.request(
                    ENTAIL_PATH,
                    &EntailRequest {
                        model,
                        premise,
                        hypothesis,
                    },
                )?;
                Ok((resp.entail_logprob, CachedValue::Entail(resp.entail_logprob)))
            },
        )
    }
}

fn parse<T: DeserializeOwned>(endpoint: &str, text: &str) -> Result<T, NetError> {
    serde_json::from_str(text).map_err(|e| NetError::Protocol {
        endpoint: endpoint.to_string(),
        message: format!("malformed response: {e}"),
    })
}

fn status_error(endpoint: &str, status: u16, text: &str) -> NetError {
    match serde_json::from_str::<ErrorBody>(text) {
        Ok(ErrorBody { error }) => NetError::Status {
            endpoint: endpoint.to_string(),
            status,
            code: error.code,
            message: error.message,
            prompt_tokens: error.prompt_tokens,
            max_tokens: error.max_tokens,
        },
        Err(_) => NetError::Status {
            endpoint: endpoint.to_string(),
            status,
            code: "http".to_string(),
            message: text.chars().take(200).collect(),
            prompt_tokens: None,
            max_tokens: None,
        },
    }
}
