//! Deterministic, scriptable in-memory provider.
//!
//! The mock serves two purposes. In unit tests, responses can be scripted
//! (queues and exact-match overrides) and every call is recorded so tests
//! can assert call counts and arguments. In offline pipeline runs it acts
//! as a self-contained model: unscripted calls synthesize a deterministic
//! response derived from a digest of the canonical request, keyed off
//! answer-format markers in the prompt (a rubric score line, a coverage
//! verdict, a pairwise preference, a yes/no answer, or GIVEN/WHEN/THEN
//! criteria), so full runs are reproducible bit-for-bit with no network.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::corpus::{ImageData, VisualDoc};

use super::{
    validate_embed_text, validate_image, validate_sequence_inputs, ChatRequest, ChatResponse,
    EmbeddingVector, Provider, ProviderCall, ProviderError, SequenceScore,
};

/// Which provider operation a recorded call was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallOp {
    Chat,
    EmbedText,
    EmbedImage,
    ImageToHtml,
    SequenceLogprob,
}

/// One recorded provider call.
#[derive(Debug, Clone)]
pub struct CallRecord {
    pub op: CallOp,
    /// Short human-readable summary of the arguments (first line of text,
    /// media type, ...), for test assertions and debugging.
    pub summary: String,
}

#[derive(Default)]
struct MockState {
    chat_queue: VecDeque<ChatResponse>,
    sequence_queue: VecDeque<Vec<f64>>,
    embed_text_overrides: HashMap<String, Vec<f64>>,
    embed_image_overrides: HashMap<String, Vec<f64>>,
    html_overrides: HashMap<String, String>,
    calls: Vec<CallRecord>,
}

/// Deterministic in-memory [`Provider`].
pub struct MockProvider {
    dim: usize,
    label: String,
    state: Mutex<MockState>,
}

impl Default for MockProvider {
    fn default() -> Self {
        MockProvider::new()
    }
}

impl MockProvider {
    pub fn new() -> Self {
        MockProvider { dim: 32, label: "mock".into(), state: Mutex::default() }
    }

    /// Sets the embedding dimensionality (default 32).
    pub fn with_dim(mut self, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        self.dim = dim;
        self
    }

    /// Distinguishes multiple mock instances in fingerprints (and thus in
    /// replay-cache partitions).
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().expect("mock state lock poisoned")
    }

    /// Queues a chat response served before any synthesized one.
    pub fn push_chat(&self, response: ChatResponse) {
        self.lock().chat_queue.push_back(response);
    }

    /// Queues a plain-text chat response.
    pub fn push_chat_text(&self, text: impl Into<String>) {
        self.push_chat(ChatResponse::new(text));
    }

    /// Queues per-token log-probabilities for one `sequence_logprob` call.
    pub fn push_sequence_logprobs(&self, logprobs: Vec<f64>) {
        assert!(!logprobs.is_empty(), "scripted sequence needs at least one token");
        self.lock().sequence_queue.push_back(logprobs);
    }

    /// Pins the (pre-normalization) embedding returned for an exact text.
    pub fn script_embed_text(&self, text: impl Into<String>, values: Vec<f64>) {
        self.lock().embed_text_overrides.insert(text.into(), values);
    }

    /// Pins the (pre-normalization) embedding returned for exact image bytes.
    pub fn script_embed_image(&self, bytes: &[u8], values: Vec<f64>) {
        self.lock().embed_image_overrides.insert(hex_digest(bytes), values);
    }

    /// Pins the HTML conversion returned for a visual document id.
    pub fn script_image_html(&self, visual_id: impl Into<String>, html: impl Into<String>) {
        self.lock().html_overrides.insert(visual_id.into(), html.into());
    }

    /// Snapshot of every call made so far.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.lock().calls.clone()
    }

    /// How many calls of one kind were made.
    pub fn count(&self, op: CallOp) -> usize {
        self.lock().calls.iter().filter(|c| c.op == op).count()
    }

    fn record(&self, op: CallOp, summary: impl Into<String>) {
        self.lock().calls.push(CallRecord { op, summary: summary.into() });
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Digest of a canonical provider call; the seed for all synthesis.
fn call_seed(call: &ProviderCall<'_>) -> [u8; 32] {
    let canonical = serde_json::to_string(&call.canonical_json())
        .expect("canonical call serialization is infallible");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hasher.finalize().into()
}

fn seed_u64(seed: &[u8; 32]) -> u64 {
    u64::from_be_bytes(seed[..8].try_into().expect("seed has at least 8 bytes"))
}

/// Expands a seed into `n` floats in [-1, 1], deterministically across
/// platforms (pure integer hashing, no RNG).
fn seeded_floats(seed: &[u8; 32], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut counter: u64 = 0;
    let mut block: [u8; 32] = *seed;
    while out.len() < n {
        let mut hasher = Sha256::new();
        hasher.update(block);
        hasher.update(counter.to_be_bytes());
        block = hasher.finalize().into();
        for chunk in block.chunks_exact(8) {
            if out.len() == n {
                break;
            }
            let raw = u64::from_be_bytes(chunk.try_into().expect("chunk is 8 bytes"));
            out.push((raw as f64 / u64::MAX as f64) * 2.0 - 1.0);
        }
        counter += 1;
    }
    out
}

/// A fraction in [0, 1) derived from a seed.
fn seeded_unit(seed: &[u8; 32], salt: u64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed);
    hasher.update(salt.to_be_bytes());
    let block: [u8; 32] = hasher.finalize().into();
    let raw = u64::from_be_bytes(block[..8].try_into().expect("block has 8 bytes"));
    (raw >> 11) as f64 / (1u64 << 53) as f64
}

impl MockProvider {
    fn synthesize_chat(&self, request: &ChatRequest) -> ChatResponse {
        let seed = call_seed(&ProviderCall::Chat { request });
        let h = seed_u64(&seed);
        let prompt = request.last_user_text().unwrap_or_default();

        if prompt.contains("Score:") {
            let level = 3 + (h % 3); // 3..=5
            return ChatResponse::new(format!(
                "Relevance: adequate. Correctness: adequate. Understandability: clear.\n\
                 Coverage: adequate. Atomicity: one outcome each. Testability: verifiable.\n\
                 Score: {level}"
            ));
        }
        if prompt.contains("Coverage:") {
            let verdict = match h % 8 {
                0 => "Partial",
                1 => "Partial",
                2 => "Not",
                _ => "Full",
            };
            return ChatResponse::new(format!(
                "The criteria address the objective.\nCoverage: {verdict}"
            ));
        }
        if prompt.contains("Preference:") {
            let choice = if h.is_multiple_of(2) { "A" } else { "B" };
            return ChatResponse::new(format!(
                "Version {choice} is clearer overall.\nPreference: {choice}"
            ));
        }
        if prompt.contains("Answer yes or no") {
            let p = 0.15 + 0.8 * seeded_unit(&seed, 1);
            let text = if p >= 0.5 { "yes" } else { "no" };
            return ChatResponse::with_logprobs(
                text,
                vec![("yes", p.ln()), ("no", (1.0 - p).ln())],
            );
        }
        if prompt.contains("exactly one improved criterion") {
            return ChatResponse::new(format!(
                "GIVEN precondition {:x} holds WHEN the user performs action {:x} \
                 THEN the system reports outcome {:x}",
                h & 0xfff,
                (h >> 12) & 0xfff,
                (h >> 24) & 0xfff,
            ));
        }

        // Default: acceptance criteria, two or three of them, with one AND
        // continuation so downstream splitting has work to do.
        let count = 2 + (h % 2) as usize;
        let lines: Vec<String> = (0..count)
            .map(|i| {
                let hi = h.rotate_left(8 * i as u32);
                let mut line = format!(
                    "GIVEN precondition {:x} holds WHEN the user performs action {:x} \
                     THEN the system reports outcome {:x}",
                    hi & 0xfff,
                    (hi >> 12) & 0xfff,
                    (hi >> 24) & 0xfff,
                );
                if i == 0 {
                    line.push_str(&format!(" AND event {:x} is logged", (hi >> 36) & 0xfff));
                }
                line
            })
            .collect();
        ChatResponse::new(lines.join("\n"))
    }
}

impl Provider for MockProvider {
    fn fingerprint(&self) -> String {
        format!("mock:{}:dim={}", self.label, self.dim)
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let summary = request
            .last_user_text()
            .unwrap_or_default()
            .lines()
            .next()
            .unwrap_or("")
            .chars()
            .take(80)
            .collect::<String>();
        self.record(CallOp::Chat, summary);
        if let Some(scripted) = self.lock().chat_queue.pop_front() {
            return Ok(scripted);
        }
        Ok(self.synthesize_chat(request))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        validate_embed_text(text)?;
        self.record(CallOp::EmbedText, text.lines().next().unwrap_or(""));
        if let Some(values) = self.lock().embed_text_overrides.get(text) {
            return EmbeddingVector::unit(values.clone());
        }
        let seed = call_seed(&ProviderCall::EmbedText { text });
        EmbeddingVector::unit(seeded_floats(&seed, self.dim))
    }

    fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, ProviderError> {
        validate_image(image)?;
        self.record(CallOp::EmbedImage, &image.media_type);
        if let Some(values) = self.lock().embed_image_overrides.get(&hex_digest(&image.bytes)) {
            return EmbeddingVector::unit(values.clone());
        }
        let seed = call_seed(&ProviderCall::embed_image(image));
        EmbeddingVector::unit(seeded_floats(&seed, self.dim))
    }

    fn image_to_html(&self, visual: &VisualDoc) -> Result<String, ProviderError> {
        validate_image(&visual.image)?;
        self.record(CallOp::ImageToHtml, &visual.id);
        if let Some(html) = self.lock().html_overrides.get(&visual.id) {
            return Ok(html.clone());
        }
        // Synthesized from image content only (not the id), mirroring a
        // model that sees pixels. Includes boilerplate so pruning has work.
        let seed = call_seed(&ProviderCall::image_to_html(&visual.image));
        let h = seed_u64(&seed);
        Ok(format!(
            "<div id=\"screen-{:x}\" class=\"frame\" style=\"margin:0\">\
             <!-- synthesized rendering -->\
             <h1>Screen {:x}</h1>\
             <p>A panel labelled {:x} with a primary action button {:x}.</p>\
             <button id=\"action-{:x}\" onclick=\"noop()\">Submit</button>\
             </div>",
            h & 0xffff,
            (h >> 16) & 0xfff,
            (h >> 28) & 0xfff,
            (h >> 40) & 0xfff,
            (h >> 52) & 0xfff,
        ))
    }

    fn sequence_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<SequenceScore, ProviderError> {
        validate_sequence_inputs(continuation)?;
        self.record(
            CallOp::SequenceLogprob,
            continuation.lines().next().unwrap_or(""),
        );
        let logprobs = match self.lock().sequence_queue.pop_front() {
            Some(scripted) => scripted,
            None => {
                let seed = call_seed(&ProviderCall::SequenceLogprob { context, continuation });
                let tokens = continuation.split_whitespace().count().max(1);
                (0..tokens)
                    .map(|i| -(0.05 + 3.0 * seeded_unit(&seed, i as u64)))
                    .collect()
            }
        };
        let total: f64 = logprobs.iter().sum();
        Ok(SequenceScore { total, per_token_mean: total / logprobs.len() as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Message, Sampling};

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(vec![Message::user(text)], Sampling::DEFAULT)
    }

    #[test]
    fn scripted_chat_responses_are_served_in_order() {
        let mock = MockProvider::new();
        mock.push_chat_text("first");
        mock.push_chat_text("second");
        assert_eq!(mock.chat(&request("q")).unwrap().text, "first");
        assert_eq!(mock.chat(&request("q")).unwrap().text, "second");
        assert_eq!(mock.count(CallOp::Chat), 2);
    }

    #[test]
    fn unscripted_chat_is_deterministic_per_request() {
        let mock = MockProvider::new();
        let a = mock.chat(&request("hello")).unwrap();
        let b = mock.chat(&request("hello")).unwrap();
        assert_eq!(a, b);
        let c = mock.chat(&request("different")).unwrap();
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn default_synthesis_yields_parseable_criteria() {
        let mock = MockProvider::new();
        let reply = mock.chat(&request("Write acceptance criteria for the story.")).unwrap();
        let acs = crate::corpus::parse_gherkin(&reply.text).unwrap();
        assert!(acs.len() >= 2);
    }

    #[test]
    fn score_marker_yields_a_parseable_score_line() {
        let mock = MockProvider::new();
        let reply = mock
            .chat(&request("Rate the set. Answer with one line \"Score: <1-5>\"."))
            .unwrap();
        let line = reply.text.lines().last().unwrap();
        assert!(line.starts_with("Score: "), "{line}");
    }

    #[test]
    fn yes_no_marker_yields_candidate_logprobs() {
        let mock = MockProvider::new();
        let p = mock.yes_probability("Is the sky blue? Answer yes or no.").unwrap();
        assert!((0.0..=1.0).contains(&p));
        // Derived through chat, so exactly one chat call is recorded.
        assert_eq!(mock.count(CallOp::Chat), 1);
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let mock = MockProvider::new().with_dim(16);
        let a = mock.embed_text("the same text").unwrap();
        let b = mock.embed_text("the same text").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 16);
        let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
        assert_ne!(a, mock.embed_text("other text").unwrap());
    }

    #[test]
    fn scripted_embeddings_are_normalized() {
        let mock = MockProvider::new();
        mock.script_embed_text("q", vec![3.0, 0.0, 0.0, 4.0]);
        let v = mock.embed_text("q").unwrap();
        assert_eq!(v.values(), &[0.6, 0.0, 0.0, 0.8]);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let mock = MockProvider::new();
        assert!(matches!(
            mock.embed_text("  ").unwrap_err(),
            ProviderError::EmptyInput { op: "embed_text" }
        ));
        assert!(matches!(
            mock.sequence_logprob("ctx", "").unwrap_err(),
            ProviderError::EmptyInput { op: "sequence_logprob" }
        ));
    }

    #[test]
    fn undecodable_images_are_rejected() {
        let mock = MockProvider::new();
        let image = ImageData { bytes: b"definitely not an image".to_vec(), media_type: "image/png".into() };
        assert!(matches!(
            mock.embed_image(&image).unwrap_err(),
            ProviderError::ImageDecode { .. }
        ));
    }

    #[test]
    fn scripted_sequence_logprobs_control_the_score() {
        let mock = MockProvider::new();
        mock.push_sequence_logprobs(vec![-1.0, -2.0, -3.0]);
        let score = mock.sequence_logprob("ctx", "a b c").unwrap();
        assert_eq!(score.total, -6.0);
        assert_eq!(score.per_token_mean, -2.0);
    }

    #[test]
    fn synthesized_sequence_scores_are_nonpositive_and_deterministic() {
        let mock = MockProvider::new();
        let a = mock.sequence_logprob("context", "some continuation here").unwrap();
        let b = mock.sequence_logprob("context", "some continuation here").unwrap();
        assert_eq!(a, b);
        assert!(a.total <= 0.0);
        assert!(a.per_token_mean <= 0.0);
        let c = mock.sequence_logprob("other context", "some continuation here").unwrap();
        assert_ne!(a.total, c.total);
    }

    #[test]
    fn synthesized_html_is_prunable_and_content_addressed() {
        let mock = MockProvider::new();
        let png = crate::providers::test_support::tiny_png();
        let visual_a = VisualDoc {
            id: "a".into(),
            image: png.clone(),
            html_full: None,
            html_pruned: None,
            caption: None,
        };
        let visual_b = VisualDoc { id: "b".into(), ..visual_a.clone() };
        let html_a = mock.image_to_html(&visual_a).unwrap();
        let html_b = mock.image_to_html(&visual_b).unwrap();
        // Same pixels, same rendering, regardless of document id.
        assert_eq!(html_a, html_b);
        let pruned = crate::providers::prune_html(&html_a).unwrap();
        assert!(pruned.len() < html_a.len());
        assert!(!pruned.contains("style"));
    }

    #[test]
    fn fingerprint_reflects_label_and_dim() {
        assert_eq!(MockProvider::new().fingerprint(), "mock:mock:dim=32");
        assert_eq!(
            MockProvider::new().with_label("judge-a").with_dim(8).fingerprint(),
            "mock:judge-a:dim=8"
        );
    }
}
