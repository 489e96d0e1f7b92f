use serde::{Deserialize, Serialize};

/// Field names of a description object, in schema order.
pub const FIELD_NAMES: [&str; 6] = ["Overall", "Head", "Limb", "Torso", "Others", "Keywords"];

/// Six-field open-vocabulary behavior description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BehaviorDescription {
    pub overall: String,
    pub head: String,
    pub limb: String,
    pub torso: String,
    pub others: String,
    /// Lowercase, trimmed, comma-free phrases in source order.
    pub keywords: Vec<String>,
    pub quality_score: Option<f64>,
}

/// The six source fields exactly as they appear in a model response.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionFields {
    #[serde(rename = "Overall")]
    pub overall: String,
    #[serde(rename = "Head")]
    pub head: String,
    #[serde(rename = "Limb")]
    pub limb: String,
    #[serde(rename = "Torso")]
    pub torso: String,
    #[serde(rename = "Others")]
    pub others: String,
    #[serde(rename = "Keywords")]
    pub keywords: String,
}

/// Splits a Keywords field on commas, trimming and lowercasing each phrase.
/// Empty phrases are dropped.
pub fn split_keywords(raw: &str) -> Vec<String> {
    raw.split(',')
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect()
}

/// Body parts with their own text field and fine-grained lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BodyPart {
    Head,
    Torso,
    Limb,
}

impl BodyPart {
    pub const ALL: [BodyPart; 3] = [BodyPart::Head, BodyPart::Torso, BodyPart::Limb];

    pub fn as_str(self) -> &'static str {
        match self {
            BodyPart::Head => "Head",
            BodyPart::Torso => "Torso",
            BodyPart::Limb => "Limb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Some(BodyPart::Head),
            "torso" => Some(BodyPart::Torso),
            "limb" => Some(BodyPart::Limb),
            _ => None,
        }
    }
}

impl std::fmt::Display for BodyPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl BehaviorDescription {
    pub fn from_fields(fields: DescriptionFields) -> Self {
        Self {
            keywords: split_keywords(&fields.keywords),
            overall: fields.overall,
            head: fields.head,
            limb: fields.limb,
            torso: fields.torso,
            others: fields.others,
            quality_score: None,
        }
    }

    pub fn to_fields(&self) -> DescriptionFields {
        DescriptionFields {
            overall: self.overall.clone(),
            head: self.head.clone(),
            limb: self.limb.clone(),
            torso: self.torso.clone(),
            others: self.others.clone(),
            keywords: self.keywords.join(", "),
        }
    }

    /// Serializes the six source fields as a JSON object.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_fields()).expect("string fields always serialize")
    }

    /// Text fed to the embedder: the six fields in schema order, each
    /// prefixed by its name.
    pub fn embedding_text(&self) -> String {
        let f = self.to_fields();
        format!(
            "Overall: {}\nHead: {}\nLimb: {}\nTorso: {}\nOthers: {}\nKeywords: {}",
            f.overall, f.head, f.limb, f.torso, f.others, f.keywords
        )
    }

    pub fn part_text(&self, part: BodyPart) -> &str {
        match part {
            BodyPart::Head => &self.head,
            BodyPart::Torso => &self.torso,
            BodyPart::Limb => &self.limb,
        }
    }

    /// The five free-text fields, in schema order.
    pub fn text_fields(&self) -> [&str; 5] {
        [&self.overall, &self.head, &self.limb, &self.torso, &self.others]
    }
}
