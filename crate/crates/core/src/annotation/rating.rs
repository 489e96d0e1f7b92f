//! Quality rating and score-based filtering of descriptions.

use serde::{Deserialize, Serialize};

use super::description::BehaviorDescription;
use crate::provider::{with_retries, Provider, ProviderError, RateRequest, RETRY_ATTEMPTS};

/// Phrases the describe prompt forbids.
pub const NEGATION_PHRASES: [&str; 2] = ["rather than", "instead of"];

/// Frozen offline rubric, starting from 10:
/// - 2 per empty free-text field,
/// - 3 if any field contains a forbidden negation phrase,
/// - 2 if fewer than three keywords,
/// clamped to [0, 10].
pub fn offline_rubric(d: &BehaviorDescription) -> f64 {
    let mut score = 10.0;
    for field in d.text_fields() {
        if field.trim().is_empty() {
            score -= 2.0;
        }
    }
    let all = d.text_fields().join("\n").to_lowercase() + "\n" + &d.keywords.join(", ");
    if NEGATION_PHRASES.iter().any(|p| all.contains(p)) {
        score -= 3.0;
    }
    if d.keywords.len() < 3 {
        score -= 2.0;
    }
    f64::clamp(score, 0.0, 10.0)
}

/// Scores `desc` with `rater`, retrying transient failures. Scores outside
/// [0, 10] are a protocol error.
pub fn rate_description(desc: &BehaviorDescription, images: &[String], rater: &dyn Provider) -> Result<f64, ProviderError> {
    let request = RateRequest { description: desc.to_json(), images: images.to_vec() };
    let (result, _) = with_retries(RETRY_ATTEMPTS, || {
        let score = rater.rate(&request)?;
        if !(0.0..=10.0).contains(&score) {
            return Err(ProviderError::Protocol(format!("score {score} outside [0, 10]")));
        }
        Ok(score)
    });
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub frame_index: u64,
    pub reason: String,
}

/// Default minimum quality score kept by [`filter_dataset`].
pub const DEFAULT_MIN_SCORE: f64 = 6.0;

/// Splits scored records into those with `score >= min_score` and a
/// rejection log. Records without a score are rejected as `"unscored"`.
pub fn filter_dataset<T>(
    records: Vec<T>,
    min_score: f64,
    key: impl Fn(&T) -> (u64, Option<f64>),
) -> (Vec<T>, Vec<Rejection>) {
    let mut kept = Vec::with_capacity(records.len());
    let mut rejected = Vec::new();
    for r in records {
        let (frame_index, score) = key(&r);
        match score {
            None => rejected.push(Rejection { frame_index, reason: "unscored".into() }),
            Some(s) if s >= min_score => kept.push(r),
            Some(s) => rejected.push(Rejection { frame_index, reason: format!("score {s} below {min_score}") }),
        }
    }
    (kept, rejected)
}
