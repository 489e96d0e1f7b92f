//! Fallback key assignment for texts the lexicon does not match.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;

use super::FineGrainedError;
use crate::annotation::extract::find_first_object;
use crate::annotation::BodyPart;
use crate::provider::{with_retries, Provider, RETRY_ATTEMPTS};

pub trait Assigner: Send + Sync {
    fn name(&self) -> String;
    /// Returns one of `keys` or a new key for `text`.
    fn assign(&self, part: BodyPart, text: &str, keys: &[String]) -> Result<String, FineGrainedError>;
}

/// Words skipped when building an offline key.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "its", "it", "is", "are", "was", "be", "being", "been", "and", "or", "of", "to",
    "in", "on", "at", "with", "by", "for", "from", "as", "while", "mouse", "mouse's", "mice", "animal", "body", "part",
    "has", "have", "very", "slightly", "also",
];

/// Words of at least two letters, lowercased; apostrophes stay inside words.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| t.chars().count() >= 2 && t.chars().all(|c| c.is_alphabetic() || c == '\''))
        .collect()
}

/// The offline key for `text`: its first three non-stopword tokens joined
/// by spaces. Returns the existing key when it is already known (ignoring
/// case). All-stopword text yields an empty string.
pub fn offline_key(text: &str, keys: &[String]) -> String {
    let window: Vec<String> = tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .take(3)
        .collect();
    let key = window.join(" ");
    keys.iter().find(|k| k.to_lowercase() == key).cloned().unwrap_or(key)
}

pub struct OfflineAssigner;

impl Assigner for OfflineAssigner {
    fn name(&self) -> String {
        "offline/first-three-words".into()
    }

    fn assign(&self, _part: BodyPart, text: &str, keys: &[String]) -> Result<String, FineGrainedError> {
        Ok(offline_key(text, keys))
    }
}

/// Never assigns; used to replay against a finished lexicon.
pub struct DisabledAssigner;

impl Assigner for DisabledAssigner {
    fn name(&self) -> String {
        "disabled".into()
    }

    fn assign(&self, part: BodyPart, _text: &str, _keys: &[String]) -> Result<String, FineGrainedError> {
        Err(FineGrainedError::AssignerDisabled(part))
    }
}

/// Header line of the assignment task sent to `complete()`.
pub const ASSIGN_TASK: &str = "TASK: assign-behavior-key";

pub fn assign_prompt(part: BodyPart, text: &str, keys: &[String]) -> String {
    format!(
        "{ASSIGN_TASK}\nPick the behavior key that fits the {part} description below. Use one of the listed \
         keys if any fits, otherwise invent a short new key of at most 64 characters. Reply with one JSON \
         object {{\"key\": \"...\"}}.\nPART: {part}\nKEYS: {}\nTEXT: {}\n",
        keys.join(" | "),
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    )
}

/// Offline answer to an assignment task prompt.
pub fn answer_offline(prompt: &str) -> Option<String> {
    if !prompt.starts_with(ASSIGN_TASK) {
        return None;
    }
    let mut keys = Vec::new();
    let mut text = None;
    for line in prompt.lines() {
        if let Some(k) = line.strip_prefix("KEYS: ") {
            keys = k.split(" | ").map(str::trim).filter(|k| !k.is_empty()).map(String::from).collect();
        } else if let Some(t) = line.strip_prefix("TEXT: ") {
            text = Some(t);
        }
    }
    let key = offline_key(text?, &keys);
    Some(serde_json::json!({ "key": key }).to_string())
}

#[derive(Deserialize)]
struct AssignReply {
    key: String,
}

pub fn parse_assign_reply(text: &str) -> Result<String, FineGrainedError> {
    let obj = find_first_object(text)
        .ok_or_else(|| FineGrainedError::ContractViolation("assign reply has no JSON object".into()))?;
    let reply: AssignReply =
        serde_json::from_str(obj).map_err(|e| FineGrainedError::ContractViolation(format!("assign reply: {e}")))?;
    Ok(reply.key)
}

pub struct ProviderAssigner {
    provider: Arc<dyn Provider>,
}

impl ProviderAssigner {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self { provider }
    }
}

impl Assigner for ProviderAssigner {
    fn name(&self) -> String {
        format!("provider/{}", self.provider.name())
    }

    fn assign(&self, part: BodyPart, text: &str, keys: &[String]) -> Result<String, FineGrainedError> {
        let prompt = assign_prompt(part, text, keys);
        let reply = with_retries(RETRY_ATTEMPTS, || self.provider.complete(&prompt)).0?;
        parse_assign_reply(&reply)
    }
}

pub type AssignerFactory =
    Box<dyn Fn(Option<Arc<dyn Provider>>) -> Result<Box<dyn Assigner>, FineGrainedError> + Send + Sync>;

/// Name-keyed assigner strategies: `offline`, `provider` and `disabled`.
pub struct AssignerRegistry {
    factories: BTreeMap<String, AssignerFactory>,
}

impl AssignerRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("offline", Box::new(|_| Ok(Box::new(OfflineAssigner) as Box<dyn Assigner>)));
        r.register("disabled", Box::new(|_| Ok(Box::new(DisabledAssigner) as Box<dyn Assigner>)));
        r.register(
            "provider",
            Box::new(|p| {
                let p = p.ok_or_else(|| FineGrainedError::Parameter("provider assigner needs a provider".into()))?;
                Ok(Box::new(ProviderAssigner::new(p)) as Box<dyn Assigner>)
            }),
        );
        r
    }

    pub fn register(&mut self, name: &str, factory: AssignerFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, provider: Option<Arc<dyn Provider>>) -> Result<Box<dyn Assigner>, FineGrainedError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| FineGrainedError::Parameter(format!("unknown assigner {name:?}")))?;
        f(provider)
    }
}
