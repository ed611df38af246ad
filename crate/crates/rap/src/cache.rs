//! Memoizing wrapper for embedding providers.

use std::collections::HashMap;
use std::sync::RwLock;

use rap_core::{Embedding, EmbeddingError, EmbeddingProvider, Modality};

/// Caches embeddings by input text. The retriever rescans memory on every
/// step, so each logged observation is embedded once per run.
#[derive(Debug)]
pub struct CachedProvider<P> {
    inner: P,
    cache: RwLock<HashMap<String, Embedding>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        CachedProvider { inner, cache: RwLock::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn modality(&self) -> Modality {
        self.inner.modality()
    }

    fn cross_modal(&self) -> bool {
        self.inner.cross_modal()
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if let Some(e) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(text) {
            return Ok(e.clone());
        }
        let e = self.inner.embed(text)?;
        self.cache.write().unwrap_or_else(|e| e.into_inner()).entry(text.to_string()).or_insert_with(|| e.clone());
        Ok(e)
    }
}
