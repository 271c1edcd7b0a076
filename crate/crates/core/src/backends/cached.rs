//! On-disk memoization of backend calls.
//!
//! Entries live in a content-addressed directory of JSON blobs keyed by
//! `(backend id, operation, sha256 of the canonical input)`. Writes go
//! through temp file + rename, so concurrent writers of the same key are
//! harmless. Generation is only cached at temperature 0.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    BackendError, BackendSet, Embedder, GenRequest, GenResponse, LanguageModel, LmStats, NliModel,
    NliScores, SafetyModel, TextGenerator,
};
use crate::hashing::content_hash;

#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key<I: Serialize>(backend_id: &str, op: &str, input: &I) -> String {
        let canonical = serde_json::to_string(input).expect("cache inputs serialize");
        content_hash(&[backend_id, op, &content_hash(&[canonical])])
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Unreadable or corrupt blobs count as misses.
    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) {
        let bytes = serde_json::to_vec(value).expect("cache values serialize");
        if let Err(e) = crate::io::atomic_write(&self.path(key), &bytes) {
            log::warn!("cache write failed: {e}");
        }
    }

    fn memo<I, T, F>(&self, backend_id: &str, op: &str, input: &I, f: F) -> Result<T, BackendError>
    where
        I: Serialize,
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, BackendError>,
    {
        let key = Self::key(backend_id, op, input);
        if let Some(hit) = self.get(&key) {
            return Ok(hit);
        }
        let v = f()?;
        self.put(&key, &v);
        Ok(v)
    }
}

struct CachedNli(Arc<dyn NliModel>, Arc<BlobStore>);
struct CachedLm(Arc<dyn LanguageModel>, Arc<BlobStore>);
struct CachedEmbed(Arc<dyn Embedder>, Arc<BlobStore>);
struct CachedGen(Arc<dyn TextGenerator>, Arc<BlobStore>);
struct CachedSafety(Arc<dyn SafetyModel>, Arc<BlobStore>);

impl NliModel for CachedNli {
    fn id(&self) -> String {
        self.0.id()
    }
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, BackendError> {
        self.1.memo(&self.0.id(), "nli", &(premise, hypothesis), || self.0.nli(premise, hypothesis))
    }
}

impl LanguageModel for CachedLm {
    fn id(&self) -> String {
        self.0.id()
    }
    fn lm_stats(&self, context: &str, continuation: &str) -> Result<LmStats, BackendError> {
        self.1.memo(&self.0.id(), "lm_stats", &(context, continuation), || {
            self.0.lm_stats(context, continuation)
        })
    }
}

impl Embedder for CachedEmbed {
    fn id(&self) -> String {
        self.0.id()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.1.memo(&self.0.id(), "embed", &text, || self.0.embed(text))
    }
}

impl TextGenerator for CachedGen {
    fn id(&self) -> String {
        self.0.id()
    }
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        if req.temperature != 0.0 {
            return self.0.generate(req);
        }
        self.1.memo(&self.0.id(), "generate", &(req, &req.hints), || self.0.generate(req))
    }
}

impl SafetyModel for CachedSafety {
    fn id(&self) -> String {
        self.0.id()
    }
    fn scores(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.1.memo(&self.0.id(), "safety", &text, || self.0.scores(text))
    }
}

/// Wraps every capability of `set` with the blob store. Contract checks in
/// [`BackendSet`] still run on cache hits.
pub fn with_cache(set: BackendSet, store: BlobStore) -> BackendSet {
    let store = Arc::new(store);
    let refusal = set.refusal.clone();
    BackendSet::new(
        Arc::new(CachedNli(set.nli, store.clone())),
        set.lms.into_iter().map(|m| Arc::new(CachedLm(m, store.clone())) as Arc<dyn LanguageModel>).collect(),
        Arc::new(CachedEmbed(set.embedder, store.clone())),
        Arc::new(CachedGen(set.generator, store.clone())),
        Arc::new(CachedSafety(set.safety, store.clone())),
        Arc::new(CachedSafety(set.detectors, store)),
    )
    .expect("wrapping preserves the model count")
    .with_refusal(refusal)
}
