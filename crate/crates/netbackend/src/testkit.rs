//! In-process fake model server and protocol fixture runner, for tests.
//!
//! Enabled with the `testkit` feature.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::{json, Value};

use icx_core::scoring::{Backend, BackendError, ModelFamily};

use crate::protocol::*;
use crate::{Client, NetError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub requests: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub log: Mutex<Vec<RecordedRequest>>,
}

type Handler = dyn Fn(&RecordedRequest) -> (u16, String) + Send + Sync;

/// HTTP server on an ephemeral localhost port. Each request runs on its own
/// thread so concurrency limits are observable.
pub struct FakeServer {
    server: Arc<tiny_http::Server>,
    url: String,
    stats: Arc<ServerStats>,
    accept: Option<JoinHandle<()>>,
}

impl FakeServer {
    pub fn start(handler: impl Fn(&RecordedRequest) -> (u16, String) + Send + Sync + 'static) -> Self {
        Self::with_delay(Duration::ZERO, handler)
    }

    /// Like [`FakeServer::start`] but holds every request for `delay` before
    /// answering.
    pub fn with_delay(
        delay: Duration,
        handler: impl Fn(&RecordedRequest) -> (u16, String) + Send + Sync + 'static,
    ) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind fake server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let stats = Arc::new(ServerStats::default());
        let handler: Arc<Handler> = Arc::new(handler);
        let accept = {
            let server = Arc::clone(&server);
            let stats = Arc::clone(&stats);
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let stats = Arc::clone(&stats);
                    let handler = Arc::clone(&handler);
                    std::thread::spawn(move || {
                        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
                        stats.requests.fetch_add(1, Ordering::SeqCst);
                        let mut body = String::new();
                        let _ = req.as_reader().read_to_string(&mut body);
                        let recorded = RecordedRequest {
                            method: req.method().as_str().to_string(),
                            path: req.url().to_string(),
                            body,
                            authorization: req
                                .headers()
                                .iter()
                                .find(|h| h.field.equiv("authorization"))
                                .map(|h| h.value.as_str().to_string()),
                        };
                        stats.log.lock().push(recorded.clone());
                        if !delay.is_zero() {
                            std::thread::sleep(delay);
                        }
                        let (status, text) = handler(&recorded);
                        stats.in_flight.fetch_sub(1, Ordering::SeqCst);
                        let header = tiny_http::Header::from_bytes("content-type", "application/json").unwrap();
                        let _ = req.respond(
                            tiny_http::Response::from_string(text)
                                .with_status_code(status)
                                .with_header(header),
                        );
                    });
                }
            })
        };
        Self {
            server,
            url: format!("http://127.0.0.1:{port}"),
            stats,
            accept: Some(accept),
        }
    }

    /// Serves `backends` through the four protocol endpoints.
    pub fn serving(backends: Vec<Arc<dyn Backend>>) -> Self {
        Self::serving_with_delay(Duration::ZERO, backends)
    }

    pub fn serving_with_delay(delay: Duration, backends: Vec<Arc<dyn Backend>>) -> Self {
        let by_name: HashMap<String, Arc<dyn Backend>> =
            backends.into_iter().map(|b| (b.descriptor().name.clone(), b)).collect();
        Self::with_delay(delay, move |req| model_endpoint(&by_name, req))
    }

    /// Answers requests matching a fixture's method, path and body with the
    /// fixture's response; anything else gets a 404.
    pub fn scripted(fixtures: Vec<Fixture>) -> Self {
        Self::start(move |req| {
            fixtures
                .iter()
                .find(|f| {
                    f.request.method == req.method
                        && f.request.path == req.path
                        && f.request.body.as_deref().unwrap_or("") == req.body
                })
                .map(|f| (f.response.status, f.response.body.clone()))
                .unwrap_or_else(|| {
                    (
                        404,
                        error_body("no_fixture", &format!("unscripted request {}", req.body)),
                    )
                })
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn log(&self) -> Vec<RecordedRequest> {
        self.stats.log.lock().clone()
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

pub fn error_body(code: &str, message: &str) -> String {
    json!({"error": {"code": code, "message": message}}).to_string()
}

fn backend_error(e: BackendError) -> (u16, String) {
    match e {
        BackendError::Overflow {
            prompt_tokens,
            max_tokens,
        } => (
            400,
            json!({"error": {
                "code": "overflow",
                "message": format!("prompt has {prompt_tokens} tokens; limit is {max_tokens}"),
                "prompt_tokens": prompt_tokens,
                "max_tokens": max_tokens,
            }})
            .to_string(),
        ),
        BackendError::FamilyMismatch { .. } => (400, error_body("family_mismatch", &e.to_string())),
        other => (500, error_body("internal", &other.to_string())),
    }
}

fn model_endpoint(backends: &HashMap<String, Arc<dyn Backend>>, req: &RecordedRequest) -> (u16, String) {
    if req.method == "GET" && req.path == MODELS_PATH {
        let mut models: Vec<ModelEntry> = backends
            .values()
            .map(|b| {
                let d = b.descriptor();
                ModelEntry {
                    name: d.name.clone(),
                    family: d.family,
                    max_tokens: d.max_tokens,
                }
            })
            .collect();
        models.sort_by(|a, b| a.name.cmp(&b.name));
        return (200, serde_json::to_string(&ModelsResponse { models }).unwrap());
    }
    if req.method != "POST" {
        return (404, error_body("not_found", &req.path));
    }
    let Ok(body) = serde_json::from_str::<Value>(&req.body) else {
        return (400, error_body("bad_request", "body is not JSON"));
    };
    let field = |name: &str| body.get(name).and_then(Value::as_str);
    let Some(model) = field("model") else {
        return (400, error_body("bad_request", "missing field model"));
    };
    let Some(backend) = backends.get(model) else {
        return (
            400,
            error_body("unknown_model", &format!("model {model} is not loaded")),
        );
    };
    match req.path.as_str() {
        SCORE_PATH => {
            let (Some(prompt), Some(conts)) = (field("prompt"), body.get("continuations").and_then(Value::as_array))
            else {
                return (400, error_body("bad_request", "missing field prompt or continuations"));
            };
            if backend.descriptor().family == ModelFamily::Nli {
                return (
                    400,
                    error_body("family_mismatch", "nli model cannot score continuations"),
                );
            }
            let conts: Vec<String> = conts.iter().filter_map(|c| c.as_str().map(str::to_string)).collect();
            let tokens = backend.count_tokens(prompt).unwrap_or(0);
            match backend.score_continuations(prompt, &conts) {
                Ok(logprobs) => (
                    200,
                    serde_json::to_string(&ScoreResponse {
                        logprobs,
                        prompt_tokens: tokens,
                    })
                    .unwrap(),
                ),
                Err(e) => backend_error(e),
            }
        }
        COUNT_TOKENS_PATH => match field("text") {
            None => (400, error_body("bad_request", "missing field text")),
            Some(text) => match backend.count_tokens(text) {
                Ok(count) => (200, serde_json::to_string(&CountTokensResponse { count }).unwrap()),
                Err(e) => backend_error(e),
            },
        },
        ENTAIL_PATH => {
            let (Some(premise), Some(hypothesis)) = (field("premise"), field("hypothesis")) else {
                return (400, error_body("bad_request", "missing field premise or hypothesis"));
            };
            match backend.entail(premise, hypothesis) {
                Ok(entail) => {
                    // Spread the remaining mass evenly over the other classes.
                    let rest = ((1.0 - entail.exp().min(1.0)) / 2.0).max(f64::MIN_POSITIVE).ln();
                    let resp = EntailResponse {
                        entail_logprob: entail,
                        class_logprobs: ClassLogprobs {
                            entailment: entail,
                            neutral: rest,
                            contradiction: rest,
                        },
                    };
                    (200, serde_json::to_string(&resp).unwrap())
                }
                Err(e) => backend_error(e),
            }
        }
        other => (404, error_body("not_found", other)),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureRequest {
    pub method: String,
    pub path: String,
    pub body: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureResponse {
    pub status: u16,
    pub body: String,
}

/// One request/response exchange with the client call that produces it and
/// the outcome the client must report.
#[derive(Debug, Clone, Deserialize)]
pub struct Fixture {
    #[serde(skip)]
    pub name: String,
    pub description: String,
    pub call: Value,
    pub request: FixtureRequest,
    pub response: FixtureResponse,
    pub expect: Value,
}

pub fn load_fixtures(dir: &Path) -> std::io::Result<Vec<Fixture>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let mut f: Fixture = serde_json::from_slice(&std::fs::read(&p)?)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))?;
            f.name = p.file_stem().unwrap().to_string_lossy().into_owned();
            Ok(f)
        })
        .collect()
}

fn call_client(client: &Client, call: &Value) -> Result<Value, NetError> {
    let s = |k: &str| call[k].as_str().unwrap_or_default().to_string();
    match call["op"].as_str() {
        Some("list_models") => Ok(serde_json::to_value(client.list_models()?).unwrap()),
        Some("score") => {
            let conts: Vec<String> = serde_json::from_value(call["continuations"].clone()).unwrap_or_default();
            Ok(json!(client.remote_score(&s("model"), &s("prompt"), &conts)?))
        }
        Some("count_tokens") => Ok(json!(client.remote_count_tokens(&s("model"), &s("text"))?)),
        Some("entail") => Ok(json!(client.remote_entail(
            &s("model"),
            &s("premise"),
            &s("hypothesis")
        )?)),
        other => panic!("unknown fixture op {other:?}"),
    }
}

fn error_matches(err: &NetError, expect: &Value) -> bool {
    match (expect["kind"].as_str(), err) {
        (Some("protocol"), NetError::Protocol { endpoint, .. }) => {
            expect["endpoint"].as_str().is_none_or(|e| e == endpoint)
        }
        (Some("status"), NetError::Status { status, code, .. }) => {
            expect["status"].as_u64().is_none_or(|s| s == u64::from(*status))
                && expect["code"].as_str().is_none_or(|c| c == code)
        }
        _ => false,
    }
}

/// Replays one fixture against a fresh scripted server: the client's request
/// must match the fixture bytes exactly and its result must match `expect`.
pub fn check_fixture(fixture: &Fixture) -> Result<(), String> {
    let server = FakeServer::scripted(vec![fixture.clone()]);
    let mut cfg = crate::ServerConfig::new(server.url());
    cfg.max_retries = 0;
    let client = Client::without_cache(cfg).map_err(|e| e.to_string())?;
    let outcome = call_client(&client, &fixture.call);
    let log = server.log();
    let [sent] = log.as_slice() else {
        return Err(format!(
            "{}: expected exactly one request, saw {}",
            fixture.name,
            log.len()
        ));
    };
    if sent.method != fixture.request.method || sent.path != fixture.request.path {
        return Err(format!("{}: sent {} {}", fixture.name, sent.method, sent.path));
    }
    let want_body = fixture.request.body.as_deref().unwrap_or("");
    if sent.body != want_body {
        return Err(format!(
            "{}: body mismatch\n sent: {}\n want: {}",
            fixture.name, sent.body, want_body
        ));
    }
    match (outcome, fixture.expect.get("ok"), fixture.expect.get("error")) {
        (Ok(got), Some(want), _) if &got == want => Ok(()),
        (Err(e), _, Some(want)) if error_matches(&e, want) => Ok(()),
        (got, _, _) => Err(format!("{}: got {got:?}, expected {}", fixture.name, fixture.expect)),
    }
}
