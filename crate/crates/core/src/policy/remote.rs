//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{model, messages, temperature, top_p, max_tokens}` to
//! `{base_url}/chat/completions` and reads `choices[0].message.content`.
//! Transport failures and 429/5xx responses retry with exponential backoff;
//! the bearer token comes from an environment variable so manifests never
//! contain secrets. A process-wide limiter keyed by base URL bounds
//! concurrent in-flight requests across all policy instances.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Policy, PolicyError, PolicyOutput, TokenUsage};
use crate::env::EpisodeState;

/// Environment variable holding the bearer token.
pub const LM_API_KEY_ENV: &str = "LM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_top_p() -> f64 {
    1.0
}
fn default_max_new_tokens() -> u32 {
    400
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    8
}
fn default_api_key_env() -> String {
    LM_API_KEY_ENV.to_string()
}

impl RemoteLmConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_new_tokens: default_max_new_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
            api_key_env: default_api_key_env(),
        }
    }
}

pub struct RemoteLmPolicy {
    config: RemoteLmConfig,
    agent: ureq::Agent,
    limiter: Arc<Semaphore>,
    request_counter: AtomicU64,
}

impl RemoteLmPolicy {
    pub fn new(config: RemoteLmConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        let limiter = limiter_for(&config.base_url, config.max_in_flight);
        Self {
            config,
            agent,
            limiter,
            request_counter: AtomicU64::new(0),
        }
    }

    /// The whole request path: prompt in, completion text out. Deliberately
    /// has no access to any environment state.
    fn complete(&self, prompt: &str) -> Result<(String, Option<TokenUsage>), PolicyError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_new_tokens,
        });
        let api_key = std::env::var(&self.config.api_key_env).ok();
        let request_id = self.request_counter.fetch_add(1, Ordering::Relaxed);

        let _permit = self.limiter.acquire();
        let mut timed_out = false;
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250u64 << (attempt - 1)));
            }
            let mut request = self
                .agent
                .post(&url)
                .set("content-type", "application/json")
                .set("x-request-id", &format!("{request_id}-{attempt}"));
            if let Some(key) = &api_key {
                request = request.set("authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body.clone()) {
                Ok(response) => {
                    let value: serde_json::Value = response
                        .into_json()
                        .map_err(|e| PolicyError::Endpoint(format!("bad response body: {e}")))?;
                    return extract_completion(&value);
                }
                Err(ureq::Error::Status(code, response)) => {
                    let text = response.into_string().unwrap_or_default();
                    last_error = format!("HTTP {code}: {text}");
                    if code != 429 && code < 500 {
                        return Err(PolicyError::Endpoint(last_error));
                    }
                }
                Err(ureq::Error::Transport(t)) => {
                    timed_out = t.kind() == ureq::ErrorKind::Io;
                    last_error = t.to_string();
                }
            }
        }
        if timed_out {
            Err(PolicyError::Timeout(self.config.max_retries + 1))
        } else {
            Err(PolicyError::Endpoint(format!(
                "gave up after {} attempts: {last_error}",
                self.config.max_retries + 1
            )))
        }
    }
}

fn extract_completion(
    value: &serde_json::Value,
) -> Result<(String, Option<TokenUsage>), PolicyError> {
    let content = value["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| {
            PolicyError::Endpoint("response lacks choices[0].message.content".to_string())
        })?
        .to_string();
    let usage = match (
        value["usage"]["prompt_tokens"].as_u64(),
        value["usage"]["completion_tokens"].as_u64(),
    ) {
        (Some(prompt_tokens), Some(completion_tokens)) => Some(TokenUsage {
            prompt_tokens,
            completion_tokens,
        }),
        _ => None,
    };
    Ok((content, usage))
}

impl Policy for RemoteLmPolicy {
    fn act(
        &mut self,
        prompt: &str,
        _env_view: Option<&EpisodeState>,
    ) -> Result<PolicyOutput, PolicyError> {
        let started = Instant::now();
        let (raw_text, token_usage) = self.complete(prompt)?;
        Ok(PolicyOutput {
            raw_text,
            latency: started.elapsed(),
            token_usage,
        })
    }

    fn name(&self) -> &'static str {
        "remote_lm"
    }
}

/// Counting semaphore; permits are released on guard drop.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> SemaphoreGuard {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard {
            semaphore: Arc::clone(self),
        }
    }
}

pub(crate) struct SemaphoreGuard {
    semaphore: Arc<Semaphore>,
}

impl Drop for SemaphoreGuard {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

fn limiter_for(base_url: &str, max_in_flight: usize) -> Arc<Semaphore> {
    static LIMITERS: OnceLock<Mutex<HashMap<String, Arc<Semaphore>>>> = OnceLock::new();
    let registry = LIMITERS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = registry.lock().unwrap();
    Arc::clone(
        map.entry(base_url.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(max_in_flight))),
    )
}
