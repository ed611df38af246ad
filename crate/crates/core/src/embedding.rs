//! Feature vectors and cosine similarity.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::hash::Fnv64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("invalid embedding dimension {0}")]
    InvalidDim(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }
}

/// Cosine similarity of two equal-length vectors, clamped to [-1, 1].
///
/// A zero-norm operand yields 0 rather than an error.
pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(-1.0, 1.0))
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    cosine_slices(&a.values, &b.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    VectorPassthrough,
}

/// Turns text into fixed-width embeddings. Implementations must be
/// deterministic: the same input always yields the same vector.
pub trait EmbeddingProvider {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn modality(&self) -> Modality {
        Modality::Text
    }
    /// True when text embeddings live in the same space as the vector
    /// observations they may be compared against.
    fn cross_modal(&self) -> bool {
        false
    }
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;
}

macro_rules! forward_provider {
    ($($ty:ty),*) => {$(
        impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for $ty {
            fn provider_id(&self) -> &str { (**self).provider_id() }
            fn dim(&self) -> usize { (**self).dim() }
            fn modality(&self) -> Modality { (**self).modality() }
            fn cross_modal(&self) -> bool { (**self).cross_modal() }
            fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> { (**self).embed(text) }
        }
    )*};
}
forward_provider!(&P, alloc::boxed::Box<P>, Arc<P>);

/// Offline signed feature hashing over lower-cased alphanumeric tokens,
/// L2-normalised. Each token lands in `PROBES` buckets so that two distinct
/// tokens essentially never produce identical vectors.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    id: String,
    dim: usize,
    seed: u64,
    cross_modal: bool,
}

const PROBES: u64 = 4;
pub const MIN_HASHING_DIM: usize = 8;

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim < MIN_HASHING_DIM {
            return Err(EmbeddingError::InvalidDim(dim));
        }
        Ok(HashingEmbedder { id: format!("hashing-d{dim}-s{seed}"), dim, seed, cross_modal: false })
    }

    /// Declare that vector observations were produced by this same embedder.
    pub fn cross_modal(mut self, yes: bool) -> Self {
        self.cross_modal = yes;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn add_token(&self, token: &str, out: &mut [f64]) {
        for probe in 0..PROBES {
            let mut h = Fnv64::with_seed(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(probe));
            h.write(token.as_bytes());
            let bits = h.finish();
            let bucket = (bits % self.dim as u64) as usize;
            let sign = if bits >> 63 == 0 { 1.0 } else { -1.0 };
            out[bucket] += sign;
        }
    }
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
}

impl EmbeddingProvider for HashingEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn cross_modal(&self) -> bool {
        self.cross_modal
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text) {
            self.add_token(&token, &mut values);
        }
        let norm = libm::sqrt(values.iter().map(|v| v * v).sum());
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding::new(values)
    }
}
