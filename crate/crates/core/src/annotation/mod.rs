//! Frame sampling, prompt construction, description extraction, rating,
//! filtering and batch annotation.

pub mod description;
pub mod extract;
pub mod prompt;
pub mod rating;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use description::{split_keywords, BehaviorDescription, BodyPart, DescriptionFields, FIELD_NAMES};
pub use extract::{extract_json, ExtractError};
pub use prompt::{build_prompt, parse_prompt_speeds, DESCRIBE_TEMPLATE};
pub use rating::{filter_dataset, offline_rubric, rate_description, Rejection, DEFAULT_MIN_SCORE};

use crate::kinematics::SpeedSummary;
use crate::provider::{with_retries, DescribeRequest, Provider, RETRY_ATTEMPTS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Evenly strided frame indices starting at 0 with
/// `stride = round(session_fps / target_rate)`, all below `duration_s · session_fps`.
pub fn sample_frames(session_fps: f64, duration_s: f64, target_rate: f64) -> Result<Vec<u64>, AnnotationError> {
    if !(target_rate > 0.0) {
        return Err(AnnotationError::Parameter(format!("target rate must be positive, got {target_rate}")));
    }
    if !(session_fps > 0.0) || target_rate > session_fps {
        return Err(AnnotationError::Parameter(format!(
            "target rate {target_rate} must not exceed session fps {session_fps}"
        )));
    }
    if !(duration_s >= 0.0) {
        return Err(AnnotationError::Parameter(format!("duration must be non-negative, got {duration_s}")));
    }
    let stride = (session_fps / target_rate).round().max(1.0) as u64;
    let limit = duration_s * session_fps;
    Ok((0..).map(|k| k * stride).take_while(|&i| (i as f64) < limit).collect())
}

/// One frame queued for annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationInput {
    pub frame_index: u64,
    pub images: Vec<String>,
    pub speeds: SpeedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    /// `describe`, `extract` or `rate`.
    pub stage: String,
    /// Error class for extraction failures (`format`, `parse`, `schema`).
    pub class: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub frame_index: u64,
    pub outcome: Result<BehaviorDescription, AnnotationFailure>,
}

fn annotate_one(input: &AnnotationInput, provider: &dyn Provider) -> FrameAnnotation {
    let fail = |stage: &str, class: Option<&str>, message: String| FrameAnnotation {
        frame_index: input.frame_index,
        outcome: Err(AnnotationFailure { stage: stage.into(), class: class.map(String::from), message }),
    };
    let request = DescribeRequest { prompt: build_prompt(&input.speeds), images: input.images.clone() };
    let raw = match with_retries(RETRY_ATTEMPTS, || provider.describe(&request)).0 {
        Ok(raw) => raw,
        Err(e) => return fail("describe", None, e.to_string()),
    };
    let mut desc = match extract_json(&raw) {
        Ok(d) => d,
        Err(e) => return fail("extract", Some(e.class()), e.to_string()),
    };
    match rate_description(&desc, &input.images, provider) {
        Ok(score) => desc.quality_score = Some(score),
        Err(e) => return fail("rate", None, e.to_string()),
    }
    FrameAnnotation { frame_index: input.frame_index, outcome: Ok(desc) }
}

/// Describe, extract and rate every frame with at most `concurrency`
/// provider calls in flight. Output order matches input order and per-frame
/// failures never abort the batch.
pub fn annotate_frames(frames: &[AnnotationInput], provider: &dyn Provider, concurrency: usize) -> Vec<FrameAnnotation> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| frames.par_iter().map(|f| annotate_one(f, provider)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{OfflineProvider, ProviderError, RateRequest};

    #[test]
    fn sampling_examples() {
        let full = sample_frames(60.0, 1200.0, 5.0).unwrap();
        assert_eq!(full.len(), 6000);
        assert_eq!(full[1], 12);
        assert_eq!(*full.last().unwrap(), 71988);
        assert_eq!(sample_frames(60.0, 1.0, 5.0).unwrap(), vec![0, 12, 24, 36, 48]);
        assert_eq!(sample_frames(60.0, 1.0, 60.0).unwrap(), (0..60).collect::<Vec<_>>());
        assert!(sample_frames(60.0, 1.0, 0.0).is_err());
        assert!(sample_frames(60.0, 1.0, -1.0).is_err());
        assert!(sample_frames(60.0, 1.0, 120.0).is_err());
    }

    fn inputs(n: u64) -> Vec<AnnotationInput> {
        (0..n)
            .map(|i| AnnotationInput {
                frame_index: i * 12,
                images: vec![format!("cam0/{i}.png"), format!("cam2/{i}.png")],
                speeds: SpeedSummary {
                    overall: Some((i % 7) as f64 * 2.0),
                    head: Some(1.0),
                    forelimb_left: Some((i % 5) as f64 * 2.0),
                    forelimb_right: Some(0.5),
                    hindlimb_left: None,
                    hindlimb_right: Some(0.2),
                },
            })
            .collect()
    }

    #[test]
    fn offline_batch_is_deterministic_and_order_stable() {
        let p = OfflineProvider::new(32);
        let frames = inputs(100);
        let a = annotate_frames(&frames, &p, 1);
        let b = annotate_frames(&frames, &p, 8);
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert!(a.iter().zip(&frames).all(|(r, f)| r.frame_index == f.frame_index));
        assert!(a.iter().all(|r| r.outcome.as_ref().unwrap().quality_score == Some(10.0)));
    }

    struct FailsOn(u64, OfflineProvider);

    impl Provider for FailsOn {
        fn name(&self) -> String {
            "fails".into()
        }
        fn describe(&self, r: &DescribeRequest) -> Result<String, ProviderError> {
            if r.images[0] == format!("cam0/{}.png", self.0) {
                Err(ProviderError::Unavailable("boom".into()))
            } else {
                self.1.describe(r)
            }
        }
        fn rate(&self, r: &RateRequest) -> Result<f64, ProviderError> {
            self.1.rate(r)
        }
        fn embed(&self, t: &str) -> Result<Vec<f64>, ProviderError> {
            self.1.embed(t)
        }
        fn complete(&self, p: &str) -> Result<String, ProviderError> {
            self.1.complete(p)
        }
    }

    #[test]
    fn failures_are_isolated() {
        let out = annotate_frames(&inputs(100), &FailsOn(7, OfflineProvider::new(32)), 4);
        let failed: Vec<_> = out.iter().filter(|r| r.outcome.is_err()).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].frame_index, 84);
        assert_eq!(failed[0].outcome.as_ref().unwrap_err().stage, "describe");
    }
}
