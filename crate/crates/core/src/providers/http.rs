//! HTTP JSON backend.
//!
//! Speaks the widely deployed OpenAI-compatible shapes: `chat/completions`
//! for chat (and image-to-HTML via an image message), `embeddings` for text
//! and image embeddings (images as `data:` URIs), and `completions` with
//! `echo` for continuation log-probabilities. The transport is injectable
//! so retry and parsing behavior is testable without a network; the real
//! transport uses a blocking HTTP client.
//!
//! API keys come from a named environment variable only — they are never
//! read from configuration files and never appear in fingerprints or
//! logs.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{ImageData, VisualDoc};

use super::{
    validate_embed_text, validate_image, validate_sequence_inputs, ChatRequest, ChatResponse,
    EmbeddingVector, Part, Provider, ProviderError, Role, Sampling, SequenceScore, TokenLogprob,
};

/// Retry policy for transient transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryConfig {
    /// Total attempts, including the first one (must be >= 1).
    pub max_attempts: u32,
    /// Base backoff; attempt `n` sleeps `backoff_ms * 2^(n-1)`.
    pub backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig { max_attempts: 3, backoff_ms: 250 }
    }
}

/// Configuration for [`HttpProvider`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    /// Model for chat and completions.
    pub model: String,
    /// Model for embeddings; defaults to `model`.
    #[serde(default)]
    pub embedding_model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Upper bound on concurrent in-flight requests.
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryConfig,
    /// Expected embedding dimensionality; when unset the first response
    /// pins it.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_parallel() -> usize {
    4
}

/// Minimal transport abstraction: one JSON POST with bearer auth.
pub trait HttpTransport: Send + Sync {
    /// Returns (status code, response body) or a transport-level error
    /// message.
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), String>;
}

struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
        timeout: Duration,
    ) -> Result<(u16, String), String> {
        let response = self
            .client
            .post(url)
            .bearer_auth(api_key)
            .json(body)
            .timeout(timeout)
            .send()
            .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Bound {
    available: Mutex<usize>,
    signal: Condvar,
}

impl Bound {
    fn new(limit: usize) -> Self {
        Bound { available: Mutex::new(limit.max(1)), signal: Condvar::new() }
    }

    fn acquire(&self) -> BoundGuard<'_> {
        let mut available = self.available.lock().expect("bound lock poisoned");
        while *available == 0 {
            available = self.signal.wait(available).expect("bound lock poisoned");
        }
        *available -= 1;
        BoundGuard { bound: self }
    }
}

struct BoundGuard<'a> {
    bound: &'a Bound,
}

impl Drop for BoundGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.bound.available.lock().expect("bound lock poisoned");
        *available += 1;
        self.bound.signal.notify_one();
    }
}

/// JSON-over-HTTP [`Provider`].
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: String,
    transport: Box<dyn HttpTransport>,
    bound: Bound,
    observed_dim: Mutex<Option<usize>>,
}

impl HttpProvider {
    /// Builds a provider, reading the API key from the configured
    /// environment variable.
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| ProviderError::MissingApiKey { var: config.api_key_env.clone() })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self::with_transport(config, api_key, Box::new(ReqwestTransport { client })))
    }

    /// Builds a provider over a custom transport (used by tests and
    /// non-standard gateways).
    pub fn with_transport(
        config: HttpProviderConfig,
        api_key: String,
        transport: Box<dyn HttpTransport>,
    ) -> Self {
        let bound = Bound::new(config.max_parallel);
        let observed_dim = Mutex::new(config.embedding_dim);
        HttpProvider { config, api_key, transport, bound, observed_dim }
    }

    /// The fingerprint a provider with these coordinates will have.
    /// Usable without constructing the provider (e.g. for strict replay).
    pub fn fingerprint_for(endpoint: &str, model: &str, embedding_model: Option<&str>) -> String {
        let embed = embedding_model.unwrap_or(model);
        format!("http:{}:{}:{}", endpoint.trim_end_matches('/'), model, embed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    /// POSTs with bounded parallelism and exponential-backoff retries.
    /// Network errors, HTTP 5xx, and HTTP 429 are retried up to
    /// `retry.max_attempts` total attempts; other statuses fail fast.
    fn post_with_retry(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let _slot = self.bound.acquire();
        let url = self.url(path);
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut rate_limited = false;
        let mut last_message = String::new();

        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let exp = attempt.saturating_sub(2).min(16);
                let sleep_ms = self.config.retry.backoff_ms.saturating_mul(1u64 << exp);
                std::thread::sleep(Duration::from_millis(sleep_ms));
            }
            match self.transport.post_json(&url, &self.api_key, body, timeout) {
                Ok((200, text)) => {
                    return serde_json::from_str(&text).map_err(|e| ProviderError::Transport {
                        attempts: attempt,
                        message: format!("response is not valid JSON: {e}"),
                    });
                }
                Ok((429, _)) => {
                    rate_limited = true;
                    last_message = "HTTP 429".into();
                }
                Ok((status, text)) if (500..600).contains(&status) => {
                    rate_limited = false;
                    last_message = format!("HTTP {status}: {}", truncate(&text, 200));
                }
                Ok((status, text)) => {
                    // Client errors are permanent; do not burn retries.
                    return Err(ProviderError::Transport {
                        attempts: attempt,
                        message: format!("HTTP {status}: {}", truncate(&text, 200)),
                    });
                }
                Err(message) => {
                    rate_limited = false;
                    last_message = message;
                }
            }
        }

        if rate_limited {
            Err(ProviderError::RateLimited { attempts: max_attempts })
        } else {
            Err(ProviderError::Transport { attempts: max_attempts, message: last_message })
        }
    }

    fn embedding_from(&self, response: &Value) -> Result<EmbeddingVector, ProviderError> {
        let values: Vec<f64> = response
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|arr| arr.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| ProviderError::Transport {
                attempts: 1,
                message: "embedding response missing /data/0/embedding".into(),
            })?;
        let mut observed = self.observed_dim.lock().expect("dim lock poisoned");
        match *observed {
            Some(expected) if expected != values.len() => {
                return Err(ProviderError::DimensionMismatch {
                    expected,
                    got: values.len(),
                });
            }
            Some(_) => {}
            None => *observed = Some(values.len()),
        }
        EmbeddingVector::unit(values)
    }

    fn embedding_model(&self) -> &str {
        self.config.embedding_model.as_deref().unwrap_or(&self.config.model)
    }
}

fn truncate(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

fn wire_messages(request: &ChatRequest) -> Vec<Value> {
    request
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content: Vec<Value> = m
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text { text } => json!({"type": "text", "text": text}),
                    Part::Image { data_base64, media_type } => json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{media_type};base64,{data_base64}")},
                    }),
                })
                .collect();
            json!({"role": role, "content": content})
        })
        .collect()
}

/// Candidate log-probabilities for the first sampled token, falling back
/// to the chosen token per position.
fn wire_logprobs(response: &Value) -> Option<Vec<TokenLogprob>> {
    let content = response.pointer("/choices/0/logprobs/content")?.as_array()?;
    let first = content.first()?;
    let from_entries = |entries: &Vec<Value>| -> Vec<TokenLogprob> {
        entries
            .iter()
            .filter_map(|e| {
                Some(TokenLogprob {
                    token: e.get("token")?.as_str()?.to_owned(),
                    logprob: e.get("logprob")?.as_f64()?,
                })
            })
            .collect()
    };
    if let Some(top) = first.get("top_logprobs").and_then(Value::as_array) {
        if !top.is_empty() {
            return Some(from_entries(&top.clone()));
        }
    }
    Some(from_entries(&content.clone()))
}

impl Provider for HttpProvider {
    fn fingerprint(&self) -> String {
        Self::fingerprint_for(
            &self.config.endpoint,
            &self.config.model,
            self.config.embedding_model.as_deref(),
        )
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": wire_messages(request),
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "logprobs": true,
            "top_logprobs": 20,
        });
        let response = self.post_with_retry("chat/completions", &body)?;
        let text = match response.pointer("/choices/0/message/content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Array(parts)) => parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
            _ => {
                return Err(ProviderError::Transport {
                    attempts: 1,
                    message: "chat response missing /choices/0/message/content".into(),
                })
            }
        };
        Ok(ChatResponse { text, token_logprobs: wire_logprobs(&response) })
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        validate_embed_text(text)?;
        let body = json!({"model": self.embedding_model(), "input": [text]});
        let response = self.post_with_retry("embeddings", &body)?;
        self.embedding_from(&response)
    }

    fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, ProviderError> {
        validate_image(image)?;
        let uri = format!(
            "data:{};base64,{}",
            image.media_type,
            base64::Engine::encode(&base64::engine::general_purpose::STANDARD, &image.bytes)
        );
        let body = json!({"model": self.embedding_model(), "input": [uri]});
        let response = self.post_with_retry("embeddings", &body)?;
        self.embedding_from(&response)
    }

    fn image_to_html(&self, visual: &VisualDoc) -> Result<String, ProviderError> {
        validate_image(&visual.image)?;
        let instruction = "Convert this UI screenshot into clean, semantic HTML that \
                           captures its structure, visible text, and interactive elements. \
                           Reply with HTML only.";
        let message = super::Message::user(instruction).with_image(&visual.image);
        let request = ChatRequest::new(vec![message], Sampling::GREEDY);
        let response = self.chat(&request)?;
        if response.text.trim().is_empty() {
            return Err(ProviderError::EmptyConversion);
        }
        Ok(response.text)
    }

    fn sequence_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<SequenceScore, ProviderError> {
        validate_sequence_inputs(continuation)?;
        let prompt = format!("{context}{continuation}");
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let response = self.post_with_retry("completions", &body)?;
        let logprobs = response.pointer("/choices/0/logprobs").ok_or_else(|| {
            ProviderError::LogprobsUnavailable("completions response has no logprobs".into())
        })?;
        let offsets: Vec<usize> = logprobs
            .get("text_offset")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as usize).collect())
            .unwrap_or_default();
        let token_logprobs: Vec<Option<f64>> = logprobs
            .get("token_logprobs")
            .and_then(Value::as_array)
            .map(|a| a.iter().map(Value::as_f64).collect())
            .unwrap_or_default();
        if offsets.len() != token_logprobs.len() || offsets.is_empty() {
            return Err(ProviderError::LogprobsUnavailable(
                "completions logprobs are missing or inconsistent".into(),
            ));
        }

        let boundary = context.len();
        let mut total = 0.0;
        let mut count = 0usize;
        for (offset, logprob) in offsets.iter().zip(&token_logprobs) {
            if *offset >= boundary {
                let lp = logprob.ok_or_else(|| {
                    ProviderError::LogprobsUnavailable(
                        "continuation token has no log-probability".into(),
                    )
                })?;
                total += lp;
                count += 1;
            }
        }
        if count == 0 {
            return Err(ProviderError::LogprobsUnavailable(
                "no tokens fell inside the continuation".into(),
            ));
        }
        Ok(SequenceScore { total, per_token_mean: total / count as f64 })
    }
}
