//! Uniform access to external model capabilities.
//!
//! Every model-backed operation the pipeline needs — chat completion, text
//! and image embedding, image-to-HTML conversion, and token
//! log-probability scoring — goes through the [`Provider`] trait. Three
//! backends implement it:
//!
//! - [`MockProvider`]: fully deterministic and scriptable, for tests and
//!   offline runs;
//! - [`ReplayProvider`]: a content-addressed record/replay cache wrapped
//!   around any other backend, making warm re-runs byte-identical and
//!   network-free;
//! - [`HttpProvider`]: JSON-over-HTTP to a configured endpoint, with
//!   bounded concurrency, retries, and API keys taken from environment
//!   variables only.
//!
//! Embeddings returned by any backend are L2-normalized. HTML pruning
//! ([`prune_html`]) is a pure function and lives here because it prepares
//! provider output (converted screenshots) for embedding.

mod html;
mod http;
mod mock;
mod replay;

pub use html::prune_html;
pub use http::{HttpProvider, HttpProviderConfig, HttpTransport, RetryConfig};
pub use mock::{CallOp, CallRecord, MockProvider};
pub use replay::{CacheMode, ReplayProvider};

use std::path::PathBuf;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{ImageData, VisualDoc};

/// Why a provider call failed.
#[derive(Debug, Error)]
pub enum ProviderError {
    /// The request violated a precondition (empty message list, invalid
    /// sampling parameters, undecodable base64, ...).
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// The input to an operation was empty.
    #[error("empty input for {op}")]
    EmptyInput { op: &'static str },
    /// Transport-level failure (network error or non-retryable status),
    /// reported with the number of attempts actually made.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The endpoint kept rate-limiting us until retries were exhausted.
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    /// Strict replay mode had no recording for this request.
    #[error("replay cache miss for key {key}")]
    CacheMiss { key: String },
    /// A stored cache record could not be read back.
    #[error("malformed cache record {path}: {message}")]
    CacheCorrupt { path: PathBuf, message: String },
    /// An embedding had the wrong number of dimensions.
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The backend did not return the token log-probabilities an operation
    /// needs.
    #[error("token log-probabilities unavailable: {0}")]
    LogprobsUnavailable(String),
    /// Image-to-HTML conversion produced no usable output.
    #[error("image-to-HTML conversion returned empty output")]
    EmptyConversion,
    /// HTML was malformed beyond recovery.
    #[error("HTML parse error: {0}")]
    HtmlParse(String),
    /// The image payload could not be decoded.
    #[error("undecodable image ({media_type}): {message}")]
    ImageDecode { media_type: String, message: String },
    /// An all-zero vector cannot be normalized to unit length.
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    /// A scripted mock ran out of queued responses.
    #[error("scripted responses exhausted for {op}")]
    ScriptExhausted { op: &'static str },
    /// The configured API-key environment variable is not set.
    #[error("missing API key environment variable {var}")]
    MissingApiKey { var: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Who authored a chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One piece of a chat message: text, or an image carried inline as base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { data_base64: String, media_type: String },
}

/// A chat message: a role plus one or more parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Message { role, parts: vec![Part::Text { text: text.into() }] }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Message::text(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message::text(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message::text(Role::Assistant, text)
    }

    /// Appends an inline image part, encoding the bytes as base64.
    pub fn with_image(mut self, image: &ImageData) -> Self {
        self.parts.push(Part::Image {
            data_base64: BASE64.encode(&image.bytes),
            media_type: image.media_type.clone(),
        });
        self
    }

    /// All text content of the message, parts joined by newlines.
    pub fn text_content(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect();
        texts.join("\n")
    }
}

/// Sampling parameters sent with every chat request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Must be finite and >= 0.
    pub temperature: f64,
    /// Must be in (0, 1].
    pub top_p: f64,
}

impl Sampling {
    /// Provider-default sampling used for generation.
    pub const DEFAULT: Sampling = Sampling { temperature: 1.0, top_p: 1.0 };
    /// Greedy decoding, used for deterministic scoring calls.
    pub const GREEDY: Sampling = Sampling { temperature: 0.0, top_p: 1.0 };
    /// Near-deterministic sampling forced for all evaluation judges.
    pub const JUDGE: Sampling = Sampling { temperature: 0.0, top_p: 0.1 };

    fn validate(&self) -> Result<(), ProviderError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// A full chat request: ordered messages plus sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub sampling: Sampling,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, sampling: Sampling) -> Self {
        ChatRequest { messages, sampling }
    }

    /// Checks the request invariants: at least one message, valid sampling
    /// parameters, and image payloads that decode from base64.
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("chat request has no messages".into()));
        }
        self.sampling.validate()?;
        for (i, message) in self.messages.iter().enumerate() {
            for part in &message.parts {
                if let Part::Image { data_base64, .. } = part {
                    BASE64.decode(data_base64).map_err(|e| {
                        ProviderError::InvalidRequest(format!(
                            "message {i} carries an image that is not valid base64: {e}"
                        ))
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Text of the last user message; marker scanning and corrective
    /// retries key off it.
    pub fn last_user_text(&self) -> Option<String> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(Message::text_content)
    }
}

/// One token with its log-probability. Log-probabilities are always <= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// A chat completion. `text` is always present; `token_logprobs` carries
/// the candidate log-probabilities for the first sampled token when the
/// backend exposes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

impl ChatResponse {
    pub fn new(text: impl Into<String>) -> Self {
        ChatResponse { text: text.into(), token_logprobs: None }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<(&str, f64)>) -> Self {
        ChatResponse {
            text: text.into(),
            token_logprobs: Some(
                logprobs
                    .into_iter()
                    .map(|(token, logprob)| TokenLogprob { token: token.into(), logprob })
                    .collect(),
            ),
        }
    }
}

/// Log-probability of a continuation given a context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    /// Sum of the continuation's token log-probabilities (<= 0).
    pub total: f64,
    /// `total` divided by the number of continuation tokens (<= 0), which
    /// makes scores comparable across continuations of different lengths.
    pub per_token_mean: f64,
}

/// An L2-normalized embedding. The unit-norm invariant (within 1e-6) is
/// established at construction and re-checked when deserializing; stored
/// values are never re-normalized, so persisted vectors round-trip
/// bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 length.
    pub fn unit(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::EmptyInput { op: "embedding" });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidRequest(
                "embedding contains non-finite values".into(),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::ZeroVector);
        }
        Ok(EmbeddingVector { values: values.into_iter().map(|v| v / norm).collect() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Dot product; for unit vectors this is the cosine similarity.
    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64, ProviderError> {
        if self.dim() != other.dim() {
            return Err(ProviderError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = String;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        if values.is_empty() {
            return Err("embedding must be non-empty".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("embedding contains non-finite values".into());
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format!("embedding is not unit length (norm {norm})"));
        }
        Ok(EmbeddingVector { values })
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.values
    }
}

/// Uniform interface to all external model capabilities.
///
/// Implementations are safe to call concurrently (`Send + Sync`); each
/// backend enforces its own parallelism bound internally.
pub trait Provider: Send + Sync {
    /// Stable identity of the backend (kind, model, configuration knobs
    /// that change outputs). Used to partition the replay cache and to
    /// stamp persisted retrieval indices.
    fn fingerprint(&self) -> String;

    /// One chat completion.
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Embeds text into the backend's vector space (unit L2 norm).
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    /// Embeds an image into the backend's vector space (unit L2 norm).
    /// The payload must decode as the tagged media type.
    fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, ProviderError>;

    /// Converts a UI screenshot into an HTML rendering of its structure.
    fn image_to_html(&self, visual: &VisualDoc) -> Result<String, ProviderError>;

    /// Scores `continuation` under the model given `context`.
    fn sequence_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<SequenceScore, ProviderError>;

    /// Probability that the model answers "yes" to a yes/no question,
    /// computed as `p_yes / (p_yes + p_no)` from the candidate
    /// log-probabilities of the first answer token (tokens are matched
    /// after trimming whitespace and case-folding). Errors with
    /// [`ProviderError::LogprobsUnavailable`] when the backend exposes
    /// neither candidate.
    fn yes_probability(&self, prompt: &str) -> Result<f64, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::EmptyInput { op: "yes_probability" });
        }
        let request = ChatRequest::new(vec![Message::user(prompt)], Sampling::GREEDY);
        let response = self.chat(&request)?;
        let logprobs = response.token_logprobs.ok_or_else(|| {
            ProviderError::LogprobsUnavailable(
                "backend returned no token log-probabilities".into(),
            )
        })?;
        let mut p_yes: Option<f64> = None;
        let mut p_no: Option<f64> = None;
        for entry in &logprobs {
            match entry.token.trim().to_ascii_lowercase().as_str() {
                "yes" if p_yes.is_none() => p_yes = Some(entry.logprob.exp()),
                "no" if p_no.is_none() => p_no = Some(entry.logprob.exp()),
                _ => {}
            }
        }
        if p_yes.is_none() && p_no.is_none() {
            return Err(ProviderError::LogprobsUnavailable(
                "neither \"yes\" nor \"no\" appeared among candidate tokens".into(),
            ));
        }
        let yes = p_yes.unwrap_or(0.0);
        let no = p_no.unwrap_or(0.0);
        Ok(yes / (yes + no))
    }
}

/// Shared precondition check for `sequence_logprob` implementations.
fn validate_sequence_inputs(continuation: &str) -> Result<(), ProviderError> {
    if continuation.trim().is_empty() {
        return Err(ProviderError::EmptyInput { op: "sequence_logprob" });
    }
    Ok(())
}

/// Shared precondition check for `embed_text` implementations.
fn validate_embed_text(text: &str) -> Result<(), ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyInput { op: "embed_text" });
    }
    Ok(())
}

/// Decodes the image payload, rejecting undecodable or mislabeled bytes.
fn validate_image(image: &ImageData) -> Result<(), ProviderError> {
    if image.bytes.is_empty() {
        return Err(ProviderError::EmptyInput { op: "embed_image" });
    }
    image::load_from_memory(&image.bytes).map_err(|e| ProviderError::ImageDecode {
        media_type: image.media_type.clone(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// A provider call in canonical serialized form.
///
/// This is the single source of truth for replay-cache keys: the key is a
/// SHA-256 digest over the canonical JSON of the call (which includes
/// sampling parameters for chat) plus the backend fingerprint, so any
/// change to the request or the backend changes the key.
#[derive(Debug, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub(crate) enum ProviderCall<'a> {
    Chat { request: &'a ChatRequest },
    EmbedText { text: &'a str },
    EmbedImage { media_type: &'a str, data_base64: String },
    ImageToHtml { media_type: &'a str, data_base64: String },
    SequenceLogprob { context: &'a str, continuation: &'a str },
}

impl<'a> ProviderCall<'a> {
    pub(crate) fn embed_image(image: &'a ImageData) -> Self {
        ProviderCall::EmbedImage {
            media_type: &image.media_type,
            data_base64: BASE64.encode(&image.bytes),
        }
    }

    pub(crate) fn image_to_html(image: &'a ImageData) -> Self {
        ProviderCall::ImageToHtml {
            media_type: &image.media_type,
            data_base64: BASE64.encode(&image.bytes),
        }
    }

    pub(crate) fn op_name(&self) -> &'static str {
        match self {
            ProviderCall::Chat { .. } => "chat",
            ProviderCall::EmbedText { .. } => "embed_text",
            ProviderCall::EmbedImage { .. } => "embed_image",
            ProviderCall::ImageToHtml { .. } => "image_to_html",
            ProviderCall::SequenceLogprob { .. } => "sequence_logprob",
        }
    }

    pub(crate) fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provider call serialization is infallible")
    }

    /// Content-addressed cache key for this call under a given backend.
    pub(crate) fn cache_key(&self, backend_fingerprint: &str) -> String {
        let doc = serde_json::json!({
            "backend": backend_fingerprint,
            "call": self.canonical_json(),
        });
        let canonical =
            serde_json::to_string(&doc).expect("provider call serialization is infallible");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::io::Cursor;

    use crate::corpus::ImageData;

    /// A real, decodable PNG for tests; `shade` varies the pixel content so
    /// distinct images can be produced.
    pub(crate) fn tiny_png_shaded(shade: u8) -> ImageData {
        let img = image::RgbaImage::from_fn(4, 4, |x, y| {
            image::Rgba([(x as u8) * 60, (y as u8) * 60, shade, 255])
        });
        let mut bytes = Vec::new();
        img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
            .expect("png encoding succeeds");
        ImageData { bytes, media_type: "image/png".into() }
    }

    pub(crate) fn tiny_png() -> ImageData {
        tiny_png_shaded(120)
    }
}
