//! OpenAI-compatible chat-completion client with retries and a
//! content-addressed response cache.
//!
//! The API key is read from the configured environment variable at call time
//! and only ever placed in the `Authorization` header. It is not stored in the
//! client, the cache, prompts or log lines.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use strata_core::reasoning::{Reasoner, ReasoningCase};

use crate::error::{Error, Result};
use crate::fsutil;

/// Endpoint settings. With `enabled = false` every reasoning step uses the
/// offline stubs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub enabled: bool,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    /// First backoff delay; doubles on every retry.
    pub backoff_base_ms: u64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            base_url: "https://api.openai.com/v1".into(),
            model: "o1".into(),
            api_key_env: "STRATA_API_KEY".into(),
            temperature: 0.0,
            timeout_secs: 120,
            max_retries: 4,
            max_concurrent: 4,
            backoff_base_ms: 1000,
        }
    }
}

/// Status and body of one HTTP exchange.
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Sends one POST. Implementations report transport failures as `Err` and
/// every HTTP status as `Ok`.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, headers: &[(&str, String)], body: &str) -> std::result::Result<HttpReply, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Transport for UreqTransport {
    fn post(&self, url: &str, headers: &[(&str, String)], body: &str) -> std::result::Result<HttpReply, String> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(*k, v.as_str());
        }
        let resp = req.send(body.as_bytes()).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.into_body().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays instead of sleeping.
#[derive(Default)]
pub struct RecordingSleeper {
    pub delays: Mutex<Vec<Duration>>,
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.delays.lock().unwrap().push(d);
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    request: serde_json::Value,
    response: String,
}

/// Directory of `<sha256>.json` files keyed by the request body.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        let rec: CacheRecord = serde_json::from_str(&text).ok()?;
        (rec.key == key).then_some(rec.response)
    }

    pub fn put(&self, key: &str, request: &str, response: &str) -> Result<()> {
        let rec = CacheRecord {
            key: key.to_string(),
            request: serde_json::from_str(request).unwrap_or(serde_json::Value::Null),
            response: response.to_string(),
        };
        fsutil::write_json(&self.path(key), &rec)
    }
}

pub struct ChatClient {
    config: LlmEndpointConfig,
    transport: Box<dyn Transport>,
    sleeper: Box<dyn Sleeper>,
    cache: Option<ResponseCache>,
    network_calls: AtomicUsize,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .field("api_key_env", &self.config.api_key_env)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

impl ChatClient {
    pub fn new(config: LlmEndpointConfig, cache: Option<ResponseCache>) -> Self {
        let timeout = Duration::from_secs(config.timeout_secs.max(1));
        Self::with_transport(config, cache, Box::new(UreqTransport::new(timeout)), Box::new(ThreadSleeper))
    }

    pub fn with_transport(
        config: LlmEndpointConfig,
        cache: Option<ResponseCache>,
        transport: Box<dyn Transport>,
        sleeper: Box<dyn Sleeper>,
    ) -> Self {
        Self {
            config,
            transport,
            sleeper,
            cache,
            network_calls: AtomicUsize::new(0),
        }
    }

    /// HTTP requests sent so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn request_body(&self, prompt: &str) -> String {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
        .to_string()
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Delay before retry `attempt` (0-based): base * 2^attempt plus up to a
    /// quarter of that as jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(20));
        let jitter = rand::rng().random_range(0..=base / 4);
        Duration::from_millis(base + jitter)
    }

    pub fn complete(&self, prompt: &str) -> Result<String> {
        let body = self.request_body(prompt);
        let key = fsutil::sha256_hex(body.as_bytes());
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            log::debug!("response cache hit {key}");
            return Ok(hit);
        }
        let api_key = std::env::var(&self.config.api_key_env).map_err(|_| {
            Error::Config(format!("environment variable {} is not set", self.config.api_key_env))
        })?;
        let scrub = |s: &str| if api_key.is_empty() { s.to_string() } else { s.replace(&api_key, "[redacted]") };
        let headers = [
            ("Authorization", format!("Bearer {api_key}")),
            ("Content-Type", "application/json".to_string()),
        ];
        let url = self.url();
        let mut attempt = 0;
        loop {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            let outcome = self.transport.post(&url, &headers, &body);
            let retryable = match &outcome {
                Ok(r) if r.status == 200 => {
                    let text = parse_completion(&r.body).map_err(|e| Error::Protocol(scrub(&e)))?;
                    if let Some(c) = &self.cache {
                        c.put(&key, &body, &text)?;
                    }
                    return Ok(text);
                }
                Ok(r) if r.status == 429 || r.status >= 500 => format!("HTTP {}", r.status),
                Ok(r) => {
                    let snippet: String = r.body.chars().take(200).collect();
                    return Err(Error::Network(scrub(&format!("HTTP {} from {url}: {snippet}", r.status))));
                }
                Err(e) => scrub(e),
            };
            if attempt >= self.config.max_retries {
                return Err(Error::Network(format!(
                    "{retryable} from {url}; giving up after {} attempts",
                    attempt + 1
                )));
            }
            let delay = self.backoff(attempt);
            log::warn!("{retryable} from {url}; retry {} in {} ms", attempt + 1, delay.as_millis());
            self.sleeper.sleep(delay);
            attempt += 1;
        }
    }

    /// Completes prompts with at most `max_concurrent` requests in flight.
    /// Results keep the input order.
    pub fn complete_many(&self, prompts: &[String]) -> Vec<Result<String>> {
        let width = self.config.max_concurrent.max(1);
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in prompts.chunks(width) {
            let results: Vec<Result<String>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|p| s.spawn(move || self.complete(p))).collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            });
            out.extend(results);
        }
        out
    }
}

fn parse_completion(body: &str) -> std::result::Result<String, String> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| format!("completion is not JSON: {e}"))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| "completion has no choices[0].message.content".to_string())?;
    if text.trim().is_empty() {
        return Err("empty completion".into());
    }
    Ok(text.to_string())
}

/// Sends the rendered prompt to a remote model.
pub struct RemoteReasoner<'a> {
    pub client: &'a ChatClient,
}

impl Reasoner for RemoteReasoner<'_> {
    fn name(&self) -> String {
        format!("remote({})", self.client.config.model)
    }

    fn complete(&self, prompt: &str, _case: &ReasoningCase) -> strata_core::Result<String> {
        self.client
            .complete(prompt)
            .map_err(|e| strata_core::Error::Reasoner(e.to_string()))
    }
}
