//! Text embeddings, cosine similarity and the persistent vector store.

mod hashed;
mod store;

pub use hashed::HashedEmbedder;
pub use store::{EmbeddingVector, StoreEntryMeta, StoreMeta, VectorStore, STORE_MAGIC, STORE_VERSION};

use thiserror::Error;

use crate::annotation::BehaviorDescription;
use crate::provider::{with_retries, Provider, ProviderError, RETRY_ATTEMPTS};

/// Default embedding width.
pub const DEFAULT_DIM: usize = 3072;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector store format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Cosine similarity `a·b / (|a||b|)` clamped to [−1, 1]. The denominator is
/// `sqrt(|a|²|b|²)`, which makes the self-similarity of any vector exactly 1.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimMismatch { expected: a.len(), got: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    cosine_from_parts(dot, na, nb)
}

/// Cosine from a dot product and the two squared norms.
pub fn cosine_from_parts(dot: f64, norm_sq_a: f64, norm_sq_b: f64) -> Result<f64, EmbeddingError> {
    if norm_sq_a == 0.0 || norm_sq_b == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (norm_sq_a * norm_sq_b).sqrt()).clamp(-1.0, 1.0))
}

/// Embeds `text` through `provider`, retrying transient failures.
pub fn embed(text: &str, provider: &dyn Provider) -> Result<Vec<f64>, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::Parameter("empty text".into()));
    }
    let v = with_retries(RETRY_ATTEMPTS, || provider.embed(text)).0?;
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::Provider(ProviderError::Protocol("embedding is empty or non-finite".into())));
    }
    Ok(v)
}

/// Embeds the six-field serialization of a description.
pub fn embed_description(desc: &BehaviorDescription, provider: &dyn Provider) -> Result<Vec<f64>, EmbeddingError> {
    embed(&desc.embedding_text(), provider)
}
