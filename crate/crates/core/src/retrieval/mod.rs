//! Indexing and ranked retrieval over the two document modalities.
//!
//! Text chunks are retrieved either by dense embedding similarity
//! ([`TextStrategy::DenseCosine`]) or by asking a language model how well a
//! chunk continues from the story ([`TextStrategy::LmScored`]).  Visual
//! documents are retrieved through one of three variants
//! ([`VisualVariant`]): convert the screenshot to HTML and embed the full
//! markup, embed a pruned version of that markup, or embed the image
//! directly.
//!
//! Indexes are plain serializable structs so a build can be persisted once
//! and reused across runs; [`TextIndex::load`]/[`VisualIndex::load`] refuse
//! an index built by a different backend.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainChunk, UserStory, VisualDoc};
use crate::providers::{EmbeddingVector, Provider, ProviderError};

/// Version tag written into persisted index files.
const INDEX_VERSION: &str = "1";

/// Errors raised while building, persisting, or querying an index.
#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    /// The underlying provider failed.
    #[error(transparent)]
    Provider(#[from] ProviderError),

    /// Two vectors with different dimensions were compared.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// A similarity or relevance score came back NaN, which has no place
    /// in a total order.
    #[error("score for document '{doc_id}' is NaN")]
    NanScore { doc_id: String },

    /// The index contains no documents.
    #[error("index is empty; nothing to rank")]
    EmptyIndex,

    /// `k` must be at least 1.
    #[error("k must be >= 1")]
    ZeroK,

    /// A persisted index could not be read or written.
    #[error("index file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A persisted index file was not valid JSON or had the wrong shape.
    #[error("index file {path}: {message}")]
    Corrupt { path: String, message: String },

    /// A persisted index has an unknown version tag.
    #[error("index file {path}: unsupported version '{version}'")]
    UnsupportedVersion { path: String, version: String },

    /// A persisted index was built by a different backend than the one
    /// about to use it.
    #[error("index was built by backend '{index_fingerprint}' but the current backend is '{current_fingerprint}'")]
    FingerprintMismatch {
        index_fingerprint: String,
        current_fingerprint: String,
    },
}

/// Cosine similarity between two raw vectors: dot(a, b) / (|a| * |b|).
///
/// Returns an error when the dimensions differ or either vector has zero
/// norm (the angle is undefined).
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(ProviderError::ZeroVector.into());
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// How text chunks are scored against a story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextStrategy {
    /// Embed story and chunk; rank by cosine similarity.
    DenseCosine,
    /// Ask a language model for the likelihood of the chunk as a
    /// continuation of the story; rank by mean per-token log-probability.
    LmScored,
}

/// How visual documents are represented for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualVariant {
    /// Convert the screenshot to HTML and embed the full markup.
    HtmlFull,
    /// Convert to HTML, prune presentation-only markup, embed the result.
    HtmlPruned,
    /// Embed the image bytes directly, no HTML step.
    DirectEmbedding,
}

/// Knobs shared by the query paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Number of documents to return.
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 5 }
    }
}

/// One ranked result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    /// Identifier of the retrieved document.
    pub doc_id: String,
    /// Similarity or relevance score (higher is better).
    pub score: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

/// Sort scored documents into a ranking and truncate to `k`.
///
/// Order: score descending, ties broken by ascending document id so the
/// ranking is total and reproducible. NaN scores are rejected up front.
fn rank_scored(
    mut scored: Vec<(String, f64)>,
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if scored.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    for (doc_id, score) in &scored {
        if score.is_nan() {
            return Err(RetrievalError::NanScore {
                doc_id: doc_id.clone(),
            });
        }
    }
    scored.sort_by(|(id_a, score_a), (id_b, score_b)| {
        score_b
            .partial_cmp(score_a)
            .expect("NaN scores rejected above")
            .then_with(|| id_a.cmp(id_b))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (doc_id, score))| RetrievalHit {
            doc_id,
            score,
            rank: i + 1,
        })
        .collect())
}

/// A text-chunk index: one embedding per chunk for the dense strategy, or
/// just the chunk texts for the model-scored strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextIndex {
    version: String,
    /// Fingerprint of the backend that produced the embeddings.
    pub backend_fingerprint: String,
    pub strategy: TextStrategy,
    /// Chunk id -> chunk text (kept for LM scoring and for transcripts).
    pub texts: BTreeMap<String, String>,
    /// Chunk id -> embedding. Empty for [`TextStrategy::LmScored`].
    pub embeddings: BTreeMap<String, EmbeddingVector>,
}

/// Build a text index over `chunks`.
///
/// For [`TextStrategy::DenseCosine`] every chunk is embedded through the
/// provider; for [`TextStrategy::LmScored`] only the texts are stored and
/// scoring happens at query time.
pub fn index_text(
    provider: &Arc<dyn Provider>,
    chunks: &[DomainChunk],
    strategy: TextStrategy,
) -> Result<TextIndex, RetrievalError> {
    let mut texts = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    for chunk in chunks {
        texts.insert(chunk.id.clone(), chunk.text.clone());
        if strategy == TextStrategy::DenseCosine {
            let vector = provider.embed_text(&chunk.text)?;
            embeddings.insert(chunk.id.clone(), vector);
        }
    }
    Ok(TextIndex {
        version: INDEX_VERSION.to_owned(),
        backend_fingerprint: provider.fingerprint(),
        strategy,
        texts,
        embeddings,
    })
}

/// Rank the indexed chunks against `story`, returning the top `config.k`.
///
/// The story side of the comparison is its full query text (title,
/// narrative, and extensions). `DenseCosine` embeds that text (through
/// `cache` when provided, so repeated queries for the same story reuse one
/// embedding call); `LmScored` asks the provider to score each chunk as a
/// continuation and ranks by mean per-token log-probability.
pub fn query_text(
    provider: &Arc<dyn Provider>,
    index: &TextIndex,
    story: &UserStory,
    config: &RetrievalConfig,
    cache: Option<&EmbedCache>,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    let query = story.query_text();
    let scored: Vec<(String, f64)> = match index.strategy {
        TextStrategy::DenseCosine => {
            let story_vec = match cache {
                Some(cache) => cache.embedding_for(provider, &story.id, &query)?,
                None => provider.embed_text(&query)?,
            };
            let mut scored = Vec::with_capacity(index.embeddings.len());
            for (doc_id, doc_vec) in &index.embeddings {
                let score = cosine(story_vec.values(), doc_vec.values())?;
                scored.push((doc_id.clone(), score));
            }
            scored
        }
        TextStrategy::LmScored => {
            let mut scored = Vec::with_capacity(index.texts.len());
            for (doc_id, text) in &index.texts {
                let seq = provider.sequence_logprob(&query, text)?;
                scored.push((doc_id.clone(), seq.per_token_mean));
            }
            scored
        }
    };
    rank_scored(scored, config.k)
}

/// A visual-document index: one embedding per document plus, for the HTML
/// variants, the markup that was embedded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisualIndex {
    version: String,
    /// Fingerprint of the backend that produced the embeddings.
    pub backend_fingerprint: String,
    pub variant: VisualVariant,
    /// Document id -> embedding.
    pub embeddings: BTreeMap<String, EmbeddingVector>,
    /// Document id -> the HTML that was embedded (HTML variants only; used
    /// in transcripts so a reader can see what the ranking was based on).
    pub html: BTreeMap<String, String>,
}

/// Build a visual index over `visuals`.
///
/// `HtmlFull` uses the stored full markup when the document carries one and
/// otherwise converts the screenshot through `converter`; `HtmlPruned`
/// prefers stored pruned markup, then prunes stored full markup, then
/// converts and prunes. `DirectEmbedding` never touches the converter: the
/// image bytes are embedded as-is through `embedder`.
pub fn index_visual(
    embedder: &Arc<dyn Provider>,
    converter: &Arc<dyn Provider>,
    visuals: &[VisualDoc],
    variant: VisualVariant,
) -> Result<VisualIndex, RetrievalError> {
    let mut embeddings = BTreeMap::new();
    let mut html = BTreeMap::new();
    for doc in visuals {
        match variant {
            VisualVariant::DirectEmbedding => {
                let vector = embedder.embed_image(&doc.image)?;
                embeddings.insert(doc.id.clone(), vector);
            }
            VisualVariant::HtmlFull => {
                let markup = match &doc.html_full {
                    Some(markup) => markup.clone(),
                    None => converter.image_to_html(doc)?,
                };
                let vector = embedder.embed_text(&markup)?;
                embeddings.insert(doc.id.clone(), vector);
                html.insert(doc.id.clone(), markup);
            }
            VisualVariant::HtmlPruned => {
                let markup = match (&doc.html_pruned, &doc.html_full) {
                    (Some(pruned), _) => pruned.clone(),
                    (None, Some(full)) => crate::providers::prune_html(full)?,
                    (None, None) => {
                        let full = converter.image_to_html(doc)?;
                        crate::providers::prune_html(&full)?
                    }
                };
                let vector = embedder.embed_text(&markup)?;
                embeddings.insert(doc.id.clone(), vector);
                html.insert(doc.id.clone(), markup);
            }
        }
    }
    Ok(VisualIndex {
        version: INDEX_VERSION.to_owned(),
        backend_fingerprint: embedder.fingerprint(),
        variant,
        embeddings,
        html,
    })
}

/// Rank the indexed visual documents against `story` by cosine similarity
/// between the story-text embedding and each document embedding.
pub fn query_visual(
    provider: &Arc<dyn Provider>,
    index: &VisualIndex,
    story: &UserStory,
    config: &RetrievalConfig,
    cache: Option<&EmbedCache>,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    let query = story.query_text();
    let story_vec = match cache {
        Some(cache) => cache.embedding_for(provider, &story.id, &query)?,
        None => provider.embed_text(&query)?,
    };
    let mut scored = Vec::with_capacity(index.embeddings.len());
    for (doc_id, doc_vec) in &index.embeddings {
        let score = cosine(story_vec.values(), doc_vec.values())?;
        scored.push((doc_id.clone(), score));
    }
    rank_scored(scored, config.k)
}

impl TextIndex {
    /// Write the index as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        save_json(path, self)
    }

    /// Read an index back, verifying the version tag and that it was built
    /// by the backend identified by `current_fingerprint`.
    pub fn load(path: &Path, current_fingerprint: &str) -> Result<Self, RetrievalError> {
        let index: TextIndex = load_json(path)?;
        check_header(
            path,
            &index.version,
            &index.backend_fingerprint,
            current_fingerprint,
        )?;
        Ok(index)
    }
}

impl VisualIndex {
    /// Write the index as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        save_json(path, self)
    }

    /// Read an index back, verifying the version tag and that it was built
    /// by the backend identified by `current_fingerprint`.
    pub fn load(path: &Path, current_fingerprint: &str) -> Result<Self, RetrievalError> {
        let index: VisualIndex = load_json(path)?;
        check_header(
            path,
            &index.version,
            &index.backend_fingerprint,
            current_fingerprint,
        )?;
        Ok(index)
    }
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RetrievalError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RetrievalError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RetrievalError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn check_header(
    path: &Path,
    version: &str,
    index_fingerprint: &str,
    current_fingerprint: &str,
) -> Result<(), RetrievalError> {
    if version != INDEX_VERSION {
        return Err(RetrievalError::UnsupportedVersion {
            path: path.display().to_string(),
            version: version.to_owned(),
        });
    }
    if index_fingerprint != current_fingerprint {
        return Err(RetrievalError::FingerprintMismatch {
            index_fingerprint: index_fingerprint.to_owned(),
            current_fingerprint: current_fingerprint.to_owned(),
        });
    }
    Ok(())
}

/// A per-run cache of story-text embeddings.
///
/// Queries for the same story against several indexes (text plus a visual
/// variant, say) should pay for one embedding call, not one per index. The
/// cache key includes the backend fingerprint so two providers never share
/// an entry.
#[derive(Debug, Default)]
pub struct EmbedCache {
    entries: Mutex<BTreeMap<(String, String), EmbeddingVector>>,
}

impl EmbedCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Return the cached embedding for `(story_id, provider fingerprint)`,
    /// embedding `text` on first use.
    pub fn embedding_for(
        &self,
        provider: &Arc<dyn Provider>,
        story_id: &str,
        text: &str,
    ) -> Result<EmbeddingVector, ProviderError> {
        let key = (story_id.to_owned(), provider.fingerprint());
        {
            let entries = self.entries.lock().expect("embed cache lock poisoned");
            if let Some(vector) = entries.get(&key) {
                return Ok(vector.clone());
            }
        }
        let vector = provider.embed_text(text)?;
        let mut entries = self.entries.lock().expect("embed cache lock poisoned");
        Ok(entries.entry(key).or_insert(vector).clone())
    }

    /// Number of distinct entries currently cached.
    pub fn len(&self) -> usize {
        self.entries.lock().expect("embed cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChunkKind;
    use crate::providers::test_support::tiny_png_shaded;
    use crate::providers::{CallOp, MockProvider};
    use proptest::prelude::*;

    fn story(id: &str, text: &str) -> UserStory {
        UserStory {
            id: id.to_owned(),
            title: text.to_owned(),
            narrative: format!("As a user I want {text}"),
            extensions: vec![],
        }
    }

    fn chunk(id: &str, text: &str) -> DomainChunk {
        DomainChunk {
            id: id.to_owned(),
            text: text.to_owned(),
            kind: ChunkKind::Background,
            source: String::new(),
        }
    }

    fn visual(id: &str, shade: u8) -> VisualDoc {
        VisualDoc {
            id: id.to_owned(),
            image: tiny_png_shaded(shade),
            html_full: None,
            html_pruned: None,
            caption: None,
        }
    }

    fn mock() -> Arc<dyn Provider> {
        Arc::new(MockProvider::new())
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let sim = cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((sim - 0.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_against_diagonal() {
        // (1,0) against the normalized diagonal: exactly 1/sqrt(2), which
        // rounds to 0.70710678 at eight decimals.
        let inv = 1.0 / 2.0_f64.sqrt();
        let sim = cosine(&[1.0, 0.0], &[inv, inv]).unwrap();
        assert!((sim - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_identical_is_one() {
        let sim = cosine(&[0.3, -0.4, 0.5], &[0.3, -0.4, 0.5]).unwrap();
        assert!((sim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_ignores_magnitude() {
        let a = [0.2, -0.7, 1.3];
        let b: Vec<f64> = a.iter().map(|x| x * 42.0).collect();
        let sim = cosine(&a, &b).unwrap();
        assert!((sim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        let err = cosine(&[1.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::DimensionMismatch { left: 1, right: 2 }
        ));
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let err = cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::Provider(ProviderError::ZeroVector)
        ));
    }

    #[test]
    fn dense_query_ranks_planted_vectors() {
        let story = story("s1", "checkout");
        // Story points along x; c-pay is nearly parallel, c-receipt is
        // diagonal, c-other is orthogonal.
        let mock = MockProvider::new().with_dim(2);
        mock.script_embed_text(story.query_text(), vec![1.0, 0.0]);
        mock.script_embed_text("pay with card", vec![0.9, 0.1]);
        mock.script_embed_text("view receipt", vec![0.5, 0.5]);
        mock.script_embed_text("unrelated text", vec![0.0, 1.0]);
        let provider: Arc<dyn Provider> = Arc::new(mock);

        let chunks = vec![
            chunk("c-pay", "pay with card"),
            chunk("c-receipt", "view receipt"),
            chunk("c-other", "unrelated text"),
        ];
        let index = index_text(&provider, &chunks, TextStrategy::DenseCosine).unwrap();

        let hits = query_text(&provider, &index, &story, &RetrievalConfig { k: 3 }, None)
            .unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["c-pay", "c-receipt", "c-other"]);
        assert_eq!(hits[0].rank, 1);
        assert_eq!(hits[2].rank, 3);
        assert!(hits[0].score > hits[1].score && hits[1].score > hits[2].score);
        // Orthogonal planted pair scores ~0 at the bottom.
        assert!(hits[2].score.abs() < 1e-9);
    }

    #[test]
    fn ties_break_by_ascending_doc_id() {
        let ranked = rank_scored(
            vec![
                ("zeta".to_owned(), 0.5),
                ("alpha".to_owned(), 0.5),
                ("mid".to_owned(), 0.5),
            ],
            3,
        )
        .unwrap();
        let ids: Vec<&str> = ranked.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["alpha", "mid", "zeta"]);
    }

    #[test]
    fn k_larger_than_corpus_returns_everything() {
        let ranked = rank_scored(vec![("a".to_owned(), 1.0), ("b".to_owned(), 0.0)], 10).unwrap();
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn zero_k_is_rejected() {
        let err = rank_scored(vec![("a".to_owned(), 1.0)], 0).unwrap_err();
        assert!(matches!(err, RetrievalError::ZeroK));
    }

    #[test]
    fn empty_index_is_rejected() {
        let err = rank_scored(vec![], 3).unwrap_err();
        assert!(matches!(err, RetrievalError::EmptyIndex));
    }

    #[test]
    fn nan_scores_are_rejected() {
        let err = rank_scored(vec![("a".to_owned(), f64::NAN)], 1).unwrap_err();
        assert!(matches!(err, RetrievalError::NanScore { .. }));
    }

    #[test]
    fn lm_scored_ranks_by_mean_logprob() {
        let mock = MockProvider::new();
        // Two chunks; queue per-chunk sequence scores. BTreeMap iteration
        // is by chunk id, so "c-a" is scored first.
        mock.push_sequence_logprobs(vec![-3.0, -3.0]); // c-a: mean -3.0
        mock.push_sequence_logprobs(vec![-0.5, -0.7]); // c-b: mean -0.6
        let provider: Arc<dyn Provider> = Arc::new(mock);

        let chunks = vec![chunk("c-a", "first text"), chunk("c-b", "second text")];
        let index = index_text(&provider, &chunks, TextStrategy::LmScored).unwrap();
        assert!(index.embeddings.is_empty());

        let hits = query_text(
            &provider,
            &index,
            &story("s1", "anything"),
            &RetrievalConfig { k: 2 },
            None,
        )
        .unwrap();
        assert_eq!(hits[0].doc_id, "c-b");
        assert!((hits[0].score - (-0.6)).abs() < 1e-9);
        assert_eq!(hits[1].doc_id, "c-a");
        assert!((hits[1].score - (-3.0)).abs() < 1e-9);
    }

    #[test]
    fn lm_scored_index_makes_no_embed_calls() {
        let mock = std::sync::Arc::new(MockProvider::new());
        let provider: Arc<dyn Provider> = mock.clone();
        let chunks = vec![chunk("c-a", "first"), chunk("c-b", "second")];
        index_text(&provider, &chunks, TextStrategy::LmScored).unwrap();
        assert_eq!(mock.count(CallOp::EmbedText), 0);
    }

    #[test]
    fn direct_embedding_never_converts() {
        let embedder = std::sync::Arc::new(MockProvider::new());
        let converter = std::sync::Arc::new(MockProvider::new());
        let e: Arc<dyn Provider> = embedder.clone();
        let c: Arc<dyn Provider> = converter.clone();
        let visuals = vec![visual("v1", 10), visual("v2", 200)];
        let index = index_visual(&e, &c, &visuals, VisualVariant::DirectEmbedding).unwrap();
        assert_eq!(index.embeddings.len(), 2);
        assert!(index.html.is_empty());
        assert_eq!(converter.count(CallOp::ImageToHtml), 0);
        assert_eq!(embedder.count(CallOp::EmbedImage), 2);
    }

    #[test]
    fn html_full_prefers_stored_markup() {
        let embedder = std::sync::Arc::new(MockProvider::new());
        let converter = std::sync::Arc::new(MockProvider::new());
        let e: Arc<dyn Provider> = embedder.clone();
        let c: Arc<dyn Provider> = converter.clone();
        let mut with_html = visual("v1", 10);
        with_html.html_full = Some("<div id=\"login\">Login</div>".to_owned());
        let without_html = visual("v2", 200);
        let index = index_visual(
            &e,
            &c,
            &[with_html, without_html],
            VisualVariant::HtmlFull,
        )
        .unwrap();
        // Converter only ran for the document without stored markup.
        assert_eq!(converter.count(CallOp::ImageToHtml), 1);
        assert_eq!(index.html["v1"], "<div id=\"login\">Login</div>");
        assert!(index.html.contains_key("v2"));
    }

    #[test]
    fn html_pruned_strips_presentation_markup() {
        let embedder = std::sync::Arc::new(MockProvider::new());
        let converter = std::sync::Arc::new(MockProvider::new());
        let e: Arc<dyn Provider> = embedder.clone();
        let c: Arc<dyn Provider> = converter.clone();
        let mut doc = visual("v1", 10);
        doc.html_full =
            Some("<div id=\"a\" style=\"color:red\" class=\"x\">Hi</div>".to_owned());
        let index = index_visual(&e, &c, &[doc], VisualVariant::HtmlPruned).unwrap();
        assert_eq!(index.html["v1"], "<div id=\"a\">Hi</div>");
        assert_eq!(converter.count(CallOp::ImageToHtml), 0);
    }

    #[test]
    fn html_pruned_prefers_stored_pruned_markup() {
        let embedder = std::sync::Arc::new(MockProvider::new());
        let converter = std::sync::Arc::new(MockProvider::new());
        let e: Arc<dyn Provider> = embedder.clone();
        let c: Arc<dyn Provider> = converter.clone();
        let mut doc = visual("v1", 10);
        doc.html_full = Some("<div style=\"x\">Full</div>".to_owned());
        doc.html_pruned = Some("<div>AlreadyPruned</div>".to_owned());
        let index = index_visual(&e, &c, &[doc], VisualVariant::HtmlPruned).unwrap();
        assert_eq!(index.html["v1"], "<div>AlreadyPruned</div>");
    }

    #[test]
    fn visual_query_ranks_by_cosine() {
        let mock = MockProvider::new().with_dim(2);
        let s = story("s1", "find the login page");
        mock.script_embed_text(s.query_text(), vec![1.0, 0.0]);
        let provider: Arc<dyn Provider> = Arc::new(mock);

        // Build an index by hand with planted embeddings.
        let mut embeddings = BTreeMap::new();
        embeddings.insert(
            "v-close".to_owned(),
            EmbeddingVector::unit(vec![0.95, 0.05]).unwrap(),
        );
        embeddings.insert(
            "v-far".to_owned(),
            EmbeddingVector::unit(vec![0.0, 1.0]).unwrap(),
        );
        let index = VisualIndex {
            version: INDEX_VERSION.to_owned(),
            backend_fingerprint: provider.fingerprint(),
            variant: VisualVariant::DirectEmbedding,
            embeddings,
            html: BTreeMap::new(),
        };

        let hits =
            query_visual(&provider, &index, &s, &RetrievalConfig { k: 2 }, None).unwrap();
        assert_eq!(hits[0].doc_id, "v-close");
        assert_eq!(hits[1].doc_id, "v-far");
        assert!(hits[1].score.abs() < 1e-9);
    }

    #[test]
    fn text_index_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let provider = mock();
        let chunks = vec![chunk("c1", "alpha"), chunk("c2", "beta")];
        let index = index_text(&provider, &chunks, TextStrategy::DenseCosine).unwrap();
        let path = dir.path().join("text.json");
        index.save(&path).unwrap();

        let loaded = TextIndex::load(&path, &provider.fingerprint()).unwrap();
        assert_eq!(loaded.texts, index.texts);
        assert_eq!(loaded.strategy, index.strategy);
        // Embeddings must survive byte-exactly.
        for (id, vector) in &index.embeddings {
            assert_eq!(loaded.embeddings[id].values(), vector.values());
        }
    }

    #[test]
    fn load_rejects_foreign_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let provider = mock();
        let index = index_text(&provider, &[chunk("c1", "alpha")], TextStrategy::DenseCosine)
            .unwrap();
        let path = dir.path().join("text.json");
        index.save(&path).unwrap();

        let err = TextIndex::load(&path, "http:other:model:embed").unwrap_err();
        assert!(matches!(err, RetrievalError::FingerprintMismatch { .. }));
    }

    #[test]
    fn load_rejects_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.json");
        std::fs::write(&path, "{not json").unwrap();
        let err = TextIndex::load(&path, "mock:mock:dim=32").unwrap_err();
        assert!(matches!(err, RetrievalError::Corrupt { .. }));
    }

    #[test]
    fn visual_index_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let embedder = mock();
        let converter = mock();
        let visuals = vec![visual("v1", 10)];
        let index =
            index_visual(&embedder, &converter, &visuals, VisualVariant::HtmlFull).unwrap();
        let path = dir.path().join("visual.json");
        index.save(&path).unwrap();
        let loaded = VisualIndex::load(&path, &embedder.fingerprint()).unwrap();
        assert_eq!(loaded.html, index.html);
        assert_eq!(
            loaded.embeddings["v1"].values(),
            index.embeddings["v1"].values()
        );
    }

    #[test]
    fn embed_cache_coalesces_story_embeddings() {
        let mock_handle = std::sync::Arc::new(MockProvider::new());
        let provider: Arc<dyn Provider> = mock_handle.clone();
        let cache = EmbedCache::new();
        let s = story("s1", "alpha");

        let first = cache
            .embedding_for(&provider, &s.id, &s.query_text())
            .unwrap();
        let second = cache
            .embedding_for(&provider, &s.id, &s.query_text())
            .unwrap();
        assert_eq!(first.values(), second.values());
        assert_eq!(mock_handle.count(CallOp::EmbedText), 1);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn embed_cache_separates_backends() {
        let a: Arc<dyn Provider> = Arc::new(MockProvider::new().with_label("a"));
        let b: Arc<dyn Provider> = Arc::new(MockProvider::new().with_label("b"));
        let cache = EmbedCache::new();
        cache.embedding_for(&a, "s1", "text").unwrap();
        cache.embedding_for(&b, "s1", "text").unwrap();
        assert_eq!(cache.len(), 2);
    }

    proptest! {
        /// Ranking is invariant under permutation of the scored input.
        #[test]
        fn ranking_is_permutation_invariant(
            scores in proptest::collection::vec(-1.0f64..1.0, 1..12),
            seed in 0u64..1000,
        ) {
            let scored: Vec<(String, f64)> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("doc-{i:02}"), *s))
                .collect();
            let mut shuffled = scored.clone();
            // Deterministic Fisher-Yates driven by the seed.
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = rank_scored(scored, 5).unwrap();
            let b = rank_scored(shuffled, 5).unwrap();
            prop_assert_eq!(a, b);
        }

        /// Top-k is always a prefix of top-(k+1).
        #[test]
        fn top_k_is_prefix_of_top_k_plus_one(
            scores in proptest::collection::vec(-1.0f64..1.0, 2..12),
            k in 1usize..10,
        ) {
            let scored: Vec<(String, f64)> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("doc-{i:02}"), *s))
                .collect();
            let small = rank_scored(scored.clone(), k).unwrap();
            let large = rank_scored(scored, k + 1).unwrap();
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }

        /// Scores never increase down the ranking and ranks are 1..=n.
        #[test]
        fn scores_non_increasing_and_ranks_consecutive(
            scores in proptest::collection::vec(-1.0f64..1.0, 1..12),
        ) {
            let scored: Vec<(String, f64)> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("doc-{i:02}"), *s))
                .collect();
            let ranked = rank_scored(scored, 100).unwrap();
            for (i, hit) in ranked.iter().enumerate() {
                prop_assert_eq!(hit.rank, i + 1);
                if i > 0 {
                    prop_assert!(ranked[i - 1].score >= hit.score);
                }
            }
        }
    }
}
