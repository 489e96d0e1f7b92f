//! Per-body-part pattern lexicon.
//!
//! Pattern dialect, all case-insensitive with whitespace runs collapsed:
//!
//! | form        | meaning                                               |
//! |-------------|-------------------------------------------------------|
//! | `text`      | substring                                             |
//! | `a * b`     | substring where `*` spans any run within one sentence |
//! | `re:expr`   | regular expression                                    |
//! | `=text`     | the whole text, nothing more                          |

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::FineGrainedError;
use crate::annotation::BodyPart;

/// Longest accepted behavior key.
pub const MAX_KEY_LEN: usize = 64;
/// Reserved key for texts whose fallback produced a malformed key.
pub const UNCLASSIFIED: &str = "unclassified";
pub const SEED_LEXICON: &str = include_str!("../../lexicon/seed.toml");

/// Lowercases and collapses whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn validate_key(key: &str) -> Result<(), String> {
    if key.trim().is_empty() {
        return Err("empty key".into());
    }
    if key.trim() != key {
        return Err(format!("key {key:?} has surrounding whitespace"));
    }
    if key.chars().count() > MAX_KEY_LEN {
        return Err(format!("key longer than {MAX_KEY_LEN} characters"));
    }
    if key.chars().any(char::is_control) {
        return Err("key contains control characters".into());
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Matcher {
    Substring(String),
    Regex(Regex),
    Exact(String),
}

#[derive(Debug, Clone)]
pub struct Pattern {
    source: String,
    matcher: Matcher,
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Pattern {
    pub fn parse(source: &str) -> Result<Self, String> {
        let matcher = if let Some(expr) = source.strip_prefix("re:") {
            let re = Regex::new(&format!("(?i){expr}")).map_err(|e| format!("pattern {source:?}: {e}"))?;
            if re.is_match("") {
                return Err(format!("pattern {source:?} matches the empty string"));
            }
            Matcher::Regex(re)
        } else if let Some(text) = source.strip_prefix('=') {
            let t = normalize(text);
            if t.is_empty() {
                return Err("empty exact pattern".into());
            }
            Matcher::Exact(t)
        } else {
            let t = normalize(source);
            if t.replace('*', "").trim().is_empty() {
                return Err(format!("pattern {source:?} has no literal text"));
            }
            if t.contains('*') {
                let parts: Vec<String> = t.split('*').map(|p| regex::escape(p.trim())).collect();
                let expr = parts.join(r"[^.!?;]*?");
                let re = Regex::new(&expr).map_err(|e| format!("pattern {source:?}: {e}"))?;
                Matcher::Regex(re)
            } else {
                Matcher::Substring(t)
            }
        };
        Ok(Self { source: source.to_string(), matcher })
    }

    /// Pattern that matches exactly `text`.
    pub fn exact(text: &str) -> Self {
        let t = normalize(text);
        Self { source: format!("={t}"), matcher: Matcher::Exact(t) }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `text` must already be normalized.
    fn matches_normalized(&self, text: &str) -> bool {
        match &self.matcher {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
            Matcher::Exact(s) => text == s,
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        self.matches_normalized(&normalize(text))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    revision: u64,
    #[serde(rename = "Head", default)]
    head: BTreeMap<String, Vec<String>>,
    #[serde(rename = "Torso", default)]
    torso: BTreeMap<String, Vec<String>>,
    #[serde(rename = "Limb", default)]
    limb: BTreeMap<String, Vec<String>>,
}

/// Behavior keys and their patterns for each body part. Every mutation bumps
/// `revision`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    revision: u64,
    parts: BTreeMap<BodyPart, BTreeMap<String, Vec<Pattern>>>,
}

impl Lexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn seed() -> Self {
        Self::from_toml(SEED_LEXICON).expect("seed lexicon is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, FineGrainedError> {
        let file: LexiconFile = toml::from_str(text).map_err(|e| FineGrainedError::Lexicon(e.to_string()))?;
        let mut parts = BTreeMap::new();
        for (part, table) in [(BodyPart::Head, file.head), (BodyPart::Torso, file.torso), (BodyPart::Limb, file.limb)] {
            let mut keys = BTreeMap::new();
            for (key, sources) in table {
                validate_key(&key).map_err(|e| FineGrainedError::Lexicon(format!("{part}: {e}")))?;
                if sources.is_empty() {
                    return Err(FineGrainedError::Lexicon(format!("{part}/{key}: no patterns")));
                }
                let patterns = sources
                    .iter()
                    .map(|s| Pattern::parse(s))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| FineGrainedError::Lexicon(format!("{part}/{key}: {e}")))?;
                keys.insert(key, patterns);
            }
            parts.insert(part, keys);
        }
        Ok(Self { revision: file.revision, parts })
    }

    pub fn to_toml(&self) -> String {
        let table = |p: BodyPart| -> BTreeMap<String, Vec<String>> {
            self.parts
                .get(&p)
                .map(|keys| {
                    keys.iter()
                        .map(|(k, ps)| (k.clone(), ps.iter().map(|x| x.source.clone()).collect()))
                        .collect()
                })
                .unwrap_or_default()
        };
        let file = LexiconFile {
            revision: self.revision,
            head: table(BodyPart::Head),
            torso: table(BodyPart::Torso),
            limb: table(BodyPart::Limb),
        };
        toml::to_string(&file).expect("lexicon serializes")
    }

    pub fn load(path: &Path) -> Result<Self, FineGrainedError> {
        let text = std::fs::read_to_string(path).map_err(|e| FineGrainedError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), FineGrainedError> {
        std::fs::write(path, self.to_toml()).map_err(|e| FineGrainedError::Io(format!("{}: {e}", path.display())))
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn keys(&self, part: BodyPart) -> Vec<String> {
        self.parts.get(&part).map(|k| k.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn contains(&self, part: BodyPart, key: &str) -> bool {
        self.parts.get(&part).is_some_and(|k| k.contains_key(key))
    }

    pub fn patterns(&self, part: BodyPart, key: &str) -> Vec<&str> {
        self.parts
            .get(&part)
            .and_then(|k| k.get(key))
            .map(|ps| ps.iter().map(Pattern::source).collect())
            .unwrap_or_default()
    }

    pub fn key_count(&self) -> usize {
        self.parts.values().map(BTreeMap::len).sum()
    }

    /// Every key of `part` with a pattern matching `text`, in key order.
    pub fn match_text(&self, part: BodyPart, text: &str) -> Vec<String> {
        let t = normalize(text);
        if t.is_empty() {
            return Vec::new();
        }
        self.parts
            .get(&part)
            .map(|keys| {
                keys.iter()
                    .filter(|(_, ps)| ps.iter().any(|p| p.matches_normalized(&t)))
                    .map(|(k, _)| k.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Adds `pattern` under `key`, creating the key if needed.
    pub fn add_pattern(&mut self, part: BodyPart, key: &str, pattern: Pattern) -> Result<(), FineGrainedError> {
        validate_key(key).map_err(FineGrainedError::Lexicon)?;
        let patterns = self.parts.entry(part).or_default().entry(key.to_string()).or_default();
        if !patterns.contains(&pattern) {
            patterns.push(pattern);
            self.revision += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seed_parses_and_round_trips() {
        let seed = Lexicon::seed();
        assert_eq!(seed.revision(), 0);
        assert!(seed.contains(BodyPart::Torso, "horizontally stretched"));
        assert_eq!(Lexicon::from_toml(&seed.to_toml()).unwrap(), seed);
    }

    #[test]
    fn pattern_forms() {
        assert!(Pattern::parse("Head is  Oriented upward").unwrap().matches("The mouse's HEAD is oriented upward."));
        let w = Pattern::parse("front paws * in the air").unwrap();
        assert!(w.matches("The front paws are raised in the air."));
        assert!(!w.matches("The front paws are on the ground. The tail is in the air."));
        let r = Pattern::parse(r"re:tail (is )?(lifted|raised)").unwrap();
        assert!(r.matches("The TAIL raised high"));
        let e = Pattern::exact("Tail pointed  upwards");
        assert!(e.matches("tail pointed upwards"));
        assert!(!e.matches("the tail pointed upwards"));
        assert_eq!(e.source(), "=tail pointed upwards");
    }

    #[test]
    fn bad_patterns_fail_at_load() {
        for bad in [
            "[Head]\n\"k\" = [\"re:(\"]",
            "[Head]\n\"k\" = [\"re:a*\"]",
            "[Head]\n\"k\" = []",
            "[Head]\n\"\" = [\"x\"]",
            "[Head]\n\"k\" = [\" * \"]",
            "[Nose]\n\"k\" = [\"x\"]",
        ] {
            assert!(matches!(Lexicon::from_toml(bad), Err(FineGrainedError::Lexicon(_))), "{bad}");
        }
    }

    #[test]
    fn spec_examples() {
        let lex = Lexicon::from_toml(
            "[Head]\n\"head upward\" = [\"head is oriented upward\"]\n[Limb]\n\
             \"forelimb in the air\" = [\"front paws are in the air\"]\n\
             \"forelimb on the ground\" = [\"front paws are on the ground\"]\n",
        )
        .unwrap();
        assert_eq!(lex.match_text(BodyPart::Head, "The mouse's head is oriented upward"), vec!["head upward"]);
        assert_eq!(lex.match_text(BodyPart::Limb, "front paws are in the air"), vec!["forelimb in the air"]);
        assert!(Lexicon::empty().match_text(BodyPart::Head, "anything").is_empty());
    }

    #[test]
    fn mutation_bumps_revision_once() {
        let mut lex = Lexicon::empty();
        lex.add_pattern(BodyPart::Limb, "tail up", Pattern::exact("tail pointed upwards")).unwrap();
        lex.add_pattern(BodyPart::Limb, "tail up", Pattern::exact("tail pointed upwards")).unwrap();
        assert_eq!(lex.revision(), 1);
        assert!(lex.add_pattern(BodyPart::Limb, &"x".repeat(65), Pattern::exact("a")).is_err());
    }

    proptest! {
        #[test]
        fn matching_is_pure(text in "[a-z ,.]{0,60}") {
            let lex = Lexicon::seed();
            for part in BodyPart::ALL {
                prop_assert_eq!(lex.match_text(part, &text), lex.clone().match_text(part, &text));
            }
        }
    }
}
