use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::embedding::{embed, EmbeddingVector, VectorStore};
use crate::provider::Provider;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub frame_id: u64,
    pub similarity: f64,
}

/// Full ranking of the store against `query`: descending cosine similarity,
/// ties to the lower frame id. The query is rounded to f32 like the stored
/// vectors, so a stored text searched verbatim scores exactly 1.
pub fn search(query: &str, store: &VectorStore, provider: &dyn Provider) -> Result<Vec<SearchHit>, AnalyticsError> {
    if query.trim().is_empty() {
        return Err(AnalyticsError::Parameter("empty query".into()));
    }
    if store.is_empty() {
        return Err(AnalyticsError::Parameter("store is empty".into()));
    }
    let q = EmbeddingVector::new(0, &embed(query, provider)?);
    let (values, norm_sq) = (q.to_f64(), q.norm_sq());
    let entries: Vec<&EmbeddingVector> = store.scan().collect();
    let mut hits = entries
        .par_iter()
        .map(|e| Ok(SearchHit { frame_id: e.id, similarity: e.cosine(&values, norm_sq)? }))
        .collect::<Result<Vec<_>, AnalyticsError>>()?;
    hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.frame_id.cmp(&b.frame_id)));
    Ok(hits)
}
