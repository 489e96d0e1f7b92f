//! Model provider contract and the name-keyed provider registry.
//!
//! Four roles are served by one provider: `describe` (images + prompt to raw
//! text), `rate` (description to a 0–10 score), `embed` (text to vector) and
//! `complete` (prompt to text). Implementations are selected by name through
//! [`ProviderRegistry`].

pub mod http;
pub mod offline;
pub mod transcript;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpProvider;
pub use offline::OfflineProvider;
pub use transcript::{RecordingProvider, ReplayProvider, Transcript, TranscriptEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("no recorded {role} response for request {key}")]
    ReplayMiss { role: String, key: String },
    #[error("invalid provider request: {0}")]
    Parameter(String),
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeRequest {
    pub prompt: String,
    /// Image references, one per view, in concatenation order.
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateRequest {
    /// The description as a six-field JSON object.
    pub description: String,
    pub images: Vec<String>,
}

pub trait Provider: Send + Sync {
    /// Identity recorded in run manifests.
    fn name(&self) -> String;
    fn describe(&self, request: &DescribeRequest) -> Result<String, ProviderError>;
    fn rate(&self, request: &RateRequest) -> Result<f64, ProviderError>;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Construction parameters shared by every provider factory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSettings {
    pub endpoint: Option<String>,
    pub embedding_dim: usize,
    pub timeout_s: u64,
    /// Transcript consumed by the `replay` provider.
    pub transcript: Option<PathBuf>,
    /// Directory that relative image references resolve against.
    pub image_root: Option<PathBuf>,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            embedding_dim: crate::embedding::DEFAULT_DIM,
            timeout_s: 120,
            transcript: None,
            image_root: None,
        }
    }
}

pub type ProviderFactory = Box<dyn Fn(&ProviderSettings) -> Result<Arc<dyn Provider>, ProviderError> + Send + Sync>;

pub struct ProviderRegistry {
    factories: BTreeMap<String, ProviderFactory>,
}

impl ProviderRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// Registry holding `offline`, `http` and `replay`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("offline", Box::new(|s| Ok(Arc::new(OfflineProvider::new(s.embedding_dim)) as Arc<dyn Provider>)));
        r.register("http", Box::new(|s| Ok(Arc::new(HttpProvider::from_settings(s)?) as Arc<dyn Provider>)));
        r.register(
            "replay",
            Box::new(|s| {
                let path = s
                    .transcript
                    .as_ref()
                    .ok_or_else(|| ProviderError::Parameter("replay provider needs a transcript path".into()))?;
                Ok(Arc::new(ReplayProvider::load(path)?) as Arc<dyn Provider>)
            }),
        );
        r
    }

    pub fn register(&mut self, name: &str, factory: ProviderFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, settings: &ProviderSettings) -> Result<Arc<dyn Provider>, ProviderError> {
        let factory = self.factories.get(name).ok_or_else(|| ProviderError::UnknownProvider(name.to_string()))?;
        factory(settings)
    }
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Number of attempts made for a provider call before giving up.
pub const RETRY_ATTEMPTS: usize = 3;

/// Runs `call` up to `attempts` times, returning the first success or the
/// last error along with the number of attempts made.
pub fn with_retries<T>(attempts: usize, mut call: impl FnMut() -> Result<T, ProviderError>) -> (Result<T, ProviderError>, usize) {
    let mut last = Err(ProviderError::Parameter("zero attempts".into()));
    for attempt in 1..=attempts.max(1) {
        match call() {
            Ok(v) => return (Ok(v), attempt),
            Err(e) => {
                log::debug!("provider attempt {attempt} failed: {e}");
                last = Err(e);
            }
        }
    }
    (last, attempts.max(1))
}
