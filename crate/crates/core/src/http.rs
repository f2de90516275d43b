//! HTTP plumbing shared by the networked tools and remote backends: a
//! pluggable transport, retry with exponential backoff, a per-service rate
//! limiter, and record/replay fixtures keyed by (tool, canonical input).

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    #[serde(default)]
    pub query: Vec<(String, String)>,
    /// Never written to fixtures; may carry credentials.
    #[serde(skip)]
    pub headers: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Get,
            url: url.into(),
            query: Vec::new(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post_json(url: impl Into<String>, body: Value) -> Self {
        HttpRequest {
            method: Method::Post,
            url: url.into(),
            query: Vec::new(),
            headers: Vec::new(),
            body: Some(body),
        }
    }

    pub fn query(mut self, key: &str, value: impl Into<String>) -> Self {
        self.query.push((key.to_string(), value.into()));
        self
    }

    pub fn header(mut self, key: &str, value: impl Into<String>) -> Self {
        self.headers.push((key.to_string(), value.into()));
        self
    }

    fn same_target(&self, other: &HttpRequest) -> bool {
        self.method == other.method
            && self.url == other.url
            && self.query == other.query
            && self.body == other.body
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Sends one request. `Err` means the exchange failed at the transport level
/// (connection, timeout); HTTP error statuses come back as responses.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport::new(Duration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse> {
        let result = match request.method {
            Method::Get => {
                let mut rb = self.agent.get(&request.url);
                for (k, v) in &request.query {
                    rb = rb.query(k, v);
                }
                for (k, v) in &request.headers {
                    rb = rb.header(k, v);
                }
                rb.call()
            }
            Method::Post => {
                let mut rb = self.agent.post(&request.url);
                for (k, v) in &request.query {
                    rb = rb.query(k, v);
                }
                for (k, v) in &request.headers {
                    rb = rb.header(k, v);
                }
                let body = request.body.clone().unwrap_or(Value::Null);
                rb.send_json(&body)
            }
        };
        let mut response = result.map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Transport installed in offline mode: every live call fails.
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse> {
        Err(Error::OfflineRefused(request.url.clone()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Enforces a minimum interval between requests to one service.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(requests_per_sec: f64) -> Self {
        let min_interval = if requests_per_sec > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_sec)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            min_interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn unlimited() -> Self {
        RateLimiter::per_second(0.0)
    }

    pub fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.min_interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// A live endpoint with retry and rate limiting.
pub struct Service {
    pub name: String,
    transport: Arc<dyn Transport>,
    limiter: Arc<RateLimiter>,
    retry: RetryPolicy,
}

/// Outcome of a request that exhausted its retries.
#[derive(Debug)]
pub struct SendFailure {
    pub error: Error,
    pub retries: u32,
}

impl Service {
    pub fn new(
        name: impl Into<String>,
        transport: Arc<dyn Transport>,
        limiter: Arc<RateLimiter>,
        retry: RetryPolicy,
    ) -> Self {
        Service {
            name: name.into(),
            transport,
            limiter,
            retry,
        }
    }

    /// Retries transport errors only; an offline refusal is never retried.
    pub fn send(&self, request: &HttpRequest) -> std::result::Result<HttpResponse, SendFailure> {
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                std::thread::sleep(delay);
            }
            self.limiter.acquire();
            match self.transport.send(request) {
                Ok(resp) => return Ok(resp),
                Err(e @ Error::OfflineRefused(_)) => {
                    return Err(SendFailure {
                        error: e,
                        retries: attempt,
                    })
                }
                Err(e) => {
                    warn!(service = %self.name, attempt, error = %e, "transport error");
                    last = Some(e);
                }
            }
        }
        Err(SendFailure {
            error: last.expect("at least one attempt"),
            retries: attempts - 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    /// Live requests, nothing recorded.
    Off,
    /// Serve from recorded fixtures; a miss is an error.
    Replay,
    /// Live requests, every exchange written to the fixture directory.
    Record,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exchange {
    pub request: HttpRequest,
    pub response: HttpResponse,
}

/// All HTTP exchanges made by one tool call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub tool: String,
    pub input: Value,
    pub exchanges: Vec<Exchange>,
}

/// Recursively sorts object keys so equal inputs serialize identically.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k.clone(), canonicalize(v)))
                    .collect(),
            )
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<tool>-<first 16 hex chars of sha256(canonical input)>`.
pub fn fixture_key(tool: &str, input: &Value) -> String {
    let canonical = serde_json::to_string(&canonicalize(input)).expect("json value serializes");
    format!("{tool}-{}", &sha256_hex(canonical.as_bytes())[..16])
}

#[derive(Debug, Clone)]
pub struct FixtureStore {
    pub dir: PathBuf,
    pub mode: FixtureMode,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>, mode: FixtureMode) -> Self {
        FixtureStore {
            dir: dir.into(),
            mode,
        }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Fixture> {
        let path = self.path_for(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FixtureMiss(key.to_string()))
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, fixture: &Fixture) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path_for(&fixture.key);
        let mut text = serde_json::to_string_pretty(fixture).expect("fixture serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn exists(dir: &Path) -> bool {
        dir.is_dir()
    }
}

/// Per-service HTTP access for tools: live, replayed, or recorded.
pub struct ToolHttp {
    service: Service,
    fixtures: Option<FixtureStore>,
}

impl ToolHttp {
    pub fn new(service: Service, fixtures: Option<FixtureStore>) -> Self {
        ToolHttp { service, fixtures }
    }

    pub fn replay_only(name: &str, dir: impl Into<PathBuf>) -> Self {
        ToolHttp {
            service: Service::new(
                name,
                Arc::new(OfflineTransport),
                Arc::new(RateLimiter::unlimited()),
                RetryPolicy::default(),
            ),
            fixtures: Some(FixtureStore::new(dir, FixtureMode::Replay)),
        }
    }

    pub fn mode(&self) -> FixtureMode {
        self.fixtures.as_ref().map_or(FixtureMode::Off, |f| f.mode)
    }

    /// Opens a session for one tool call. In replay mode the recorded
    /// exchanges are loaded up front, so a missing fixture fails here.
    pub fn session(&self, tool: &str, input: &Value) -> Result<HttpSession<'_>> {
        let key = fixture_key(tool, input);
        let replay = match &self.fixtures {
            Some(store) if store.mode == FixtureMode::Replay => {
                let fx = store.load(&key)?;
                debug!(key = %key, exchanges = fx.exchanges.len(), "replaying fixture");
                Some(fx.exchanges.into_iter().collect())
            }
            _ => None,
        };
        Ok(HttpSession {
            owner: self,
            tool: tool.to_string(),
            input: canonicalize(input),
            key,
            replay,
            recorded: Vec::new(),
        })
    }
}

pub struct HttpSession<'a> {
    owner: &'a ToolHttp,
    tool: String,
    input: Value,
    key: String,
    replay: Option<std::collections::VecDeque<Exchange>>,
    recorded: Vec<Exchange>,
}

impl HttpSession<'_> {
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn send(&mut self, request: &HttpRequest) -> std::result::Result<HttpResponse, SendFailure> {
        if let Some(queue) = self.replay.as_mut() {
            let fail = |msg: String| SendFailure {
                error: Error::FixtureMiss(msg),
                retries: 0,
            };
            let ex = queue
                .pop_front()
                .ok_or_else(|| fail(format!("{} (no more recorded exchanges)", self.key)))?;
            if !ex.request.same_target(request) {
                return Err(fail(format!(
                    "{} (request mismatch: recorded {} vs {})",
                    self.key, ex.request.url, request.url
                )));
            }
            return Ok(ex.response);
        }
        let response = self.owner.service.send(request)?;
        self.recorded.push(Exchange {
            request: request.clone(),
            response: response.clone(),
        });
        Ok(response)
    }

    /// Persists the recorded exchanges when recording.
    pub fn finish(self) -> Result<()> {
        if let Some(store) = &self.owner.fixtures {
            if store.mode == FixtureMode::Record && !self.recorded.is_empty() {
                store.save(&Fixture {
                    key: self.key,
                    tool: self.tool,
                    input: self.input,
                    exchanges: self.recorded,
                })?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::collections::VecDeque;

    /// Scripted transport: returns queued results and logs requests.
    #[derive(Default)]
    pub struct ScriptedTransport {
        pub responses: Mutex<VecDeque<Result<HttpResponse>>>,
        pub seen: Mutex<Vec<HttpRequest>>,
    }

    impl ScriptedTransport {
        pub fn with(responses: Vec<Result<HttpResponse>>) -> Arc<Self> {
            Arc::new(ScriptedTransport {
                responses: Mutex::new(responses.into()),
                seen: Mutex::new(Vec::new()),
            })
        }

        pub fn ok(body: &str) -> Result<HttpResponse> {
            Ok(HttpResponse {
                status: 200,
                body: body.to_string(),
            })
        }
    }

    impl Transport for ScriptedTransport {
        fn send(&self, request: &HttpRequest) -> Result<HttpResponse> {
            self.seen.lock().unwrap().push(request.clone());
            self.responses
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(Error::Transport("script exhausted".into())))
        }
    }

    pub fn fast_service(name: &str, transport: Arc<dyn Transport>) -> Service {
        Service::new(
            name,
            transport,
            Arc::new(RateLimiter::unlimited()),
            RetryPolicy {
                attempts: 3,
                base_delay: Duration::from_millis(1),
            },
        )
    }
}
