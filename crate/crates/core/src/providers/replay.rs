//! Content-addressed record/replay cache around any provider.
//!
//! Every call is keyed by a digest over its canonical serialized request
//! (including sampling parameters) and the backend fingerprint, and stored
//! as one JSON file holding the full request and response. Replaying a
//! populated cache is network-free and byte-identical; strict replay with
//! no inner backend turns any unseen request into a hard error, which is
//! how tests pin down exactly which calls a pipeline stage makes.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::corpus::{ImageData, VisualDoc};

use super::{
    validate_embed_text, validate_image, validate_sequence_inputs, ChatRequest, ChatResponse,
    EmbeddingVector, Provider, ProviderCall, ProviderError, SequenceScore,
};

/// How the cache interacts with the wrapped backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Always call the inner backend and store its response.
    Record,
    /// Serve from the cache only; a miss is [`ProviderError::CacheMiss`].
    Replay,
    /// Serve from the cache when possible, otherwise call the inner
    /// backend and store the response.
    Auto,
}

/// On-disk form of one cached call.
#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    version: String,
    backend: String,
    operation: String,
    request: serde_json::Value,
    response: serde_json::Value,
}

const RECORD_VERSION: &str = "1";

/// A [`Provider`] that records and replays another provider's responses.
///
/// The wrapper is semantically transparent: its fingerprint is the inner
/// backend's fingerprint, so indices and cache partitions do not change
/// when a cache is added or removed.
pub struct ReplayProvider {
    inner: Option<Arc<dyn Provider>>,
    dir: PathBuf,
    mode: CacheMode,
    fingerprint: String,
    write_lock: Mutex<()>,
}

impl ReplayProvider {
    /// Records every call through `inner` into `dir`.
    pub fn record(inner: Arc<dyn Provider>, dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        Self::with_inner(inner, dir.into(), CacheMode::Record)
    }

    /// Serves from the cache, falling back to `inner` (and recording) on a
    /// miss.
    pub fn auto(inner: Arc<dyn Provider>, dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        Self::with_inner(inner, dir.into(), CacheMode::Auto)
    }

    /// Strict replay: no inner backend, a miss is an error. The expected
    /// backend fingerprint must be supplied since there is no backend to
    /// ask; it selects the cache partition recorded by that backend.
    pub fn replay(dir: impl Into<PathBuf>, fingerprint: impl Into<String>) -> Self {
        ReplayProvider {
            inner: None,
            dir: dir.into(),
            mode: CacheMode::Replay,
            fingerprint: fingerprint.into(),
            write_lock: Mutex::new(()),
        }
    }

    fn with_inner(
        inner: Arc<dyn Provider>,
        dir: PathBuf,
        mode: CacheMode,
    ) -> Result<Self, ProviderError> {
        std::fs::create_dir_all(&dir)
            .map_err(|source| ProviderError::Io { path: dir.clone(), source })?;
        let fingerprint = inner.fingerprint();
        Ok(ReplayProvider { inner: Some(inner), dir, mode, fingerprint, write_lock: Mutex::new(()) })
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn read_record<R: DeserializeOwned>(&self, path: &Path) -> Result<R, ProviderError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ProviderError::Io { path: path.to_path_buf(), source })?;
        let record: CacheRecord = serde_json::from_slice(&bytes).map_err(|e| {
            ProviderError::CacheCorrupt { path: path.to_path_buf(), message: e.to_string() }
        })?;
        if record.version != RECORD_VERSION {
            return Err(ProviderError::CacheCorrupt {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported record version \"{}\", expected \"{RECORD_VERSION}\"",
                    record.version
                ),
            });
        }
        serde_json::from_value(record.response).map_err(|e| ProviderError::CacheCorrupt {
            path: path.to_path_buf(),
            message: format!("response does not deserialize: {e}"),
        })
    }

    fn write_record(
        &self,
        path: &Path,
        call: &ProviderCall<'_>,
        response: &serde_json::Value,
    ) -> Result<(), ProviderError> {
        let record = CacheRecord {
            version: RECORD_VERSION.into(),
            backend: self.fingerprint.clone(),
            operation: call.op_name().into(),
            request: call.canonical_json(),
            response: response.clone(),
        };
        let json = serde_json::to_string_pretty(&record)
            .expect("cache record serialization is infallible");
        // Serialize writers; readers never see a partial file because the
        // content lands via rename.
        let _guard = self.write_lock.lock().expect("cache write lock poisoned");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json)
            .map_err(|source| ProviderError::Io { path: tmp.clone(), source })?;
        std::fs::rename(&tmp, path)
            .map_err(|source| ProviderError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }

    /// Cache-or-call for one operation.
    fn cached<R>(
        &self,
        call: ProviderCall<'_>,
        live: impl FnOnce(&dyn Provider) -> Result<R, ProviderError>,
    ) -> Result<R, ProviderError>
    where
        R: Serialize + DeserializeOwned,
    {
        let key = call.cache_key(&self.fingerprint);
        let path = self.record_path(&key);
        if self.mode != CacheMode::Record && path.is_file() {
            return self.read_record(&path);
        }
        let inner = match (&self.inner, self.mode) {
            (Some(inner), _) => inner.as_ref(),
            (None, _) => return Err(ProviderError::CacheMiss { key }),
        };
        let response = live(inner)?;
        let value =
            serde_json::to_value(&response).expect("response serialization is infallible");
        self.write_record(&path, &call, &value)?;
        Ok(response)
    }
}

impl Provider for ReplayProvider {
    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.cached(ProviderCall::Chat { request }, |inner| inner.chat(request))
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        validate_embed_text(text)?;
        self.cached(ProviderCall::EmbedText { text }, |inner| inner.embed_text(text))
    }

    fn embed_image(&self, image: &ImageData) -> Result<EmbeddingVector, ProviderError> {
        validate_image(image)?;
        self.cached(ProviderCall::embed_image(image), |inner| inner.embed_image(image))
    }

    fn image_to_html(&self, visual: &VisualDoc) -> Result<String, ProviderError> {
        validate_image(&visual.image)?;
        self.cached(ProviderCall::image_to_html(&visual.image), |inner| {
            inner.image_to_html(visual)
        })
    }

    fn sequence_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<SequenceScore, ProviderError> {
        validate_sequence_inputs(continuation)?;
        self.cached(ProviderCall::SequenceLogprob { context, continuation }, |inner| {
            inner.sequence_logprob(context, continuation)
        })
    }
}
