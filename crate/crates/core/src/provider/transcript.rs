//! Request/response transcripts for recording online runs and replaying
//! them offline.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{DescribeRequest, Provider, ProviderError, RateRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: String,
    pub key: String,
    pub request: Value,
    pub response: Value,
}

/// SHA-256 over the role and the compact JSON of the request.
pub fn request_key(role: &str, request: &Value) -> String {
    let mut h = Sha256::new();
    h.update(role.as_bytes());
    h.update(b"\n");
    h.update(request.to_string().as_bytes());
    hex::encode(h.finalize())
}

/// Entries keyed by (role, request key). Saved sorted, one JSON object per
/// line, so the file is independent of call order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: BTreeMap<(String, String), TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, role: &str, request: Value, response: Value) {
        let key = request_key(role, &request);
        self.entries
            .insert((role.to_string(), key.clone()), TranscriptEntry { role: role.to_string(), key, request, response });
    }

    pub fn lookup(&self, role: &str, request: &Value) -> Result<&Value, ProviderError> {
        let key = request_key(role, request);
        self.entries
            .get(&(role.to_string(), key.clone()))
            .map(|e| &e.response)
            .ok_or(ProviderError::ReplayMiss { role: role.to_string(), key })
    }

    pub fn entries(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.values()
    }

    pub fn merge(&mut self, other: &Transcript) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = fs::File::open(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        let mut t = Self::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?;
            t.entries.insert((entry.role.clone(), entry.key.clone()), entry);
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let mut out = Vec::new();
        for e in self.entries.values() {
            serde_json::to_writer(&mut out, e).map_err(|e| ProviderError::Io(e.to_string()))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(&out).map_err(|e| ProviderError::Io(e.to_string()))
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("request types serialize")
}

fn embed_request(text: &str) -> Value {
    serde_json::json!({ "text": text })
}

fn complete_request(prompt: &str) -> Value {
    serde_json::json!({ "prompt": prompt })
}

/// Wraps a provider and records every successful call.
pub struct RecordingProvider {
    inner: Arc<dyn Provider>,
    transcript: Mutex<Transcript>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn Provider>) -> Self {
        Self { inner, transcript: Mutex::new(Transcript::new()) }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }

    fn record(&self, role: &str, request: Value, response: Value) {
        self.transcript.lock().expect("transcript lock").insert(role, request, response);
    }
}

impl Provider for RecordingProvider {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn describe(&self, request: &DescribeRequest) -> Result<String, ProviderError> {
        let out = self.inner.describe(request)?;
        self.record("describe", to_value(request), Value::String(out.clone()));
        Ok(out)
    }

    fn rate(&self, request: &RateRequest) -> Result<f64, ProviderError> {
        let out = self.inner.rate(request)?;
        self.record("rate", to_value(request), to_value(&out));
        Ok(out)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let out = self.inner.embed(text)?;
        self.record("embed", embed_request(text), to_value(&out));
        Ok(out)
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let out = self.inner.complete(prompt)?;
        self.record("complete", complete_request(prompt), Value::String(out.clone()));
        Ok(out)
    }
}

/// Answers every call from a recorded transcript; unknown requests fail
/// with [`ProviderError::ReplayMiss`].
pub struct ReplayProvider {
    transcript: Transcript,
}

impl ReplayProvider {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(Transcript::load(path)?))
    }

    fn answer<T: for<'de> Deserialize<'de>>(&self, role: &str, request: Value) -> Result<T, ProviderError> {
        let v = self.transcript.lookup(role, &request)?;
        serde_json::from_value(v.clone()).map_err(|e| ProviderError::Protocol(format!("recorded {role} response: {e}")))
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> String {
        format!("replay/{}", self.transcript.len())
    }

    fn describe(&self, request: &DescribeRequest) -> Result<String, ProviderError> {
        self.answer("describe", to_value(request))
    }

    fn rate(&self, request: &RateRequest) -> Result<f64, ProviderError> {
        self.answer("rate", to_value(request))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.answer("embed", embed_request(text))
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.answer("complete", complete_request(prompt))
    }
}
