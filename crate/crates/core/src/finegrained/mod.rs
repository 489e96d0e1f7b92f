//! Body-part behavior classification and keyword info-cards.
//!
//! Frames are processed in ascending frame id, and within a frame in the
//! order Head, Torso, Limb. A part text that no pattern matches goes to the
//! [`assign::Assigner`]; the resulting key and an exact pattern for the text
//! are added to the lexicon before the next part is looked at, so later
//! frames can match it directly.

pub mod assign;
pub mod lexicon;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{Assigner, AssignerRegistry, DisabledAssigner, OfflineAssigner, ProviderAssigner};
pub use lexicon::{validate_key, Lexicon, Pattern, MAX_KEY_LEN, UNCLASSIFIED};

use crate::annotation::{BehaviorDescription, BodyPart};
use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum FineGrainedError {
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("assigner disabled; no key for unmatched {0} text")]
    AssignerDisabled(BodyPart),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Matched keys per part for one frame.
pub type PartLabels = BTreeMap<BodyPart, Vec<String>>;

pub fn match_description(desc: &BehaviorDescription, lexicon: &Lexicon) -> PartLabels {
    BodyPart::ALL.iter().map(|&p| (p, lexicon.match_text(p, desc.part_text(p)))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGrainedLabels {
    pub lexicon_revision: u64,
    pub frames: BTreeMap<u64, PartLabels>,
}

impl FineGrainedLabels {
    /// `(frame_id, part, key)` rows.
    pub fn rows(&self) -> Vec<(u64, BodyPart, String)> {
        let mut out = Vec::new();
        for (f, parts) in &self.frames {
            for (p, keys) in parts {
                for k in keys {
                    out.push((*f, *p, k.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackError {
    pub frame_id: u64,
    pub part: BodyPart,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewKey {
    pub frame_id: u64,
    pub part: BodyPart,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutcome {
    pub labels: FineGrainedLabels,
    pub lexicon: Lexicon,
    pub errors: Vec<FallbackError>,
    pub new_keys: Vec<NewKey>,
}

/// Classifies every frame's part texts, growing the lexicon through
/// `assigner` for unmatched texts. Fallback failures are collected in
/// `errors` and leave that part unlabeled; a malformed key labels the text
/// [`UNCLASSIFIED`].
pub fn classify_frames(
    frames: &[(u64, &BehaviorDescription)],
    lexicon: Lexicon,
    assigner: &dyn Assigner,
) -> ClassifyOutcome {
    let mut lexicon = lexicon;
    let mut order: Vec<&(u64, &BehaviorDescription)> = frames.iter().collect();
    order.sort_by_key(|f| f.0);
    let mut labels = BTreeMap::new();
    let mut errors = Vec::new();
    let mut new_keys = Vec::new();
    for &&(frame_id, desc) in &order {
        let mut parts = PartLabels::new();
        for part in BodyPart::ALL {
            let text = desc.part_text(part);
            let mut keys = lexicon.match_text(part, text);
            if keys.is_empty() && !text.trim().is_empty() {
                let known = lexicon.keys(part);
                let key = match assigner.assign(part, text, &known) {
                    Ok(k) => match validate_key(&k) {
                        Ok(()) => Some(k),
                        Err(e) => {
                            errors.push(FallbackError {
                                frame_id,
                                part,
                                message: format!("contract violation: assigner returned {k:?}: {e}"),
                            });
                            Some(UNCLASSIFIED.to_string())
                        }
                    },
                    Err(e @ FineGrainedError::ContractViolation(_)) => {
                        errors.push(FallbackError { frame_id, part, message: e.to_string() });
                        Some(UNCLASSIFIED.to_string())
                    }
                    Err(e) => {
                        errors.push(FallbackError { frame_id, part, message: e.to_string() });
                        None
                    }
                };
                if let Some(key) = key {
                    let is_new = !lexicon.contains(part, &key);
                    lexicon
                        .add_pattern(part, &key, Pattern::exact(text))
                        .expect("key validated");
                    if is_new {
                        new_keys.push(NewKey { frame_id, part, key: key.clone() });
                    }
                    keys = vec![key];
                }
            }
            parts.insert(part, keys);
        }
        labels.insert(frame_id, parts);
    }
    ClassifyOutcome {
        labels: FineGrainedLabels { lexicon_revision: lexicon.revision(), frames: labels },
        lexicon,
        errors,
        new_keys,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoCardEntry {
    pub part: BodyPart,
    pub key: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordInfoCard {
    pub scope: String,
    pub total_frames: usize,
    pub lexicon_revision: u64,
    /// Observed keys only, ordered by part then key.
    pub entries: Vec<InfoCardEntry>,
}

impl KeywordInfoCard {
    pub fn frequency(&self, part: BodyPart, key: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.part == part && e.key == key).map(|e| e.frequency)
    }
}

/// Counts, per (part, key), the frames carrying it. `frames` restricts the
/// scope; `None` uses every labeled frame.
pub fn build_infocard(
    labels: &FineGrainedLabels,
    scope: &str,
    frames: Option<&BTreeSet<u64>>,
) -> Result<KeywordInfoCard, FineGrainedError> {
    let selected: Vec<&PartLabels> = labels
        .frames
        .iter()
        .filter(|(f, _)| frames.is_none_or(|s| s.contains(f)))
        .map(|(_, p)| p)
        .collect();
    if selected.is_empty() {
        return Err(FineGrainedError::Parameter(format!("no labeled frames in scope {scope:?}")));
    }
    let mut counts: BTreeMap<(BodyPart, &str), usize> = BTreeMap::new();
    for parts in &selected {
        for (p, keys) in *parts {
            let unique: BTreeSet<&str> = keys.iter().map(String::as_str).collect();
            for k in unique {
                *counts.entry((*p, k)).or_default() += 1;
            }
        }
    }
    let total = selected.len();
    Ok(KeywordInfoCard {
        scope: scope.to_string(),
        total_frames: total,
        lexicon_revision: labels.lexicon_revision,
        entries: counts
            .into_iter()
            .map(|((part, key), count)| InfoCardEntry {
                part,
                key: key.to_string(),
                count,
                frequency: count as f64 / total as f64,
            })
            .collect(),
    })
}
