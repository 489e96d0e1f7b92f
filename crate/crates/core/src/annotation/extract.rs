//! Recovery of the description object from raw model output.

use serde_json::Value;
use thiserror::Error;

use super::description::{split_keywords, BehaviorDescription, DescriptionFields, FIELD_NAMES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("format error: {0}")]
    Format(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
}

impl ExtractError {
    pub fn class(&self) -> &'static str {
        match self {
            ExtractError::Format(_) => "format",
            ExtractError::Parse(_) => "parse",
            ExtractError::Schema(_) => "schema",
        }
    }
}

/// Byte range of the first balanced `{...}` in `raw`, honouring JSON string
/// quoting so braces inside strings do not count. An opening brace that is
/// never closed is skipped and the scan resumes after it.
pub fn find_first_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[open..=i]);
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

/// Locates, parses and validates the first description object in `raw`.
pub fn extract_json(raw: &str) -> Result<BehaviorDescription, ExtractError> {
    let candidate = find_first_object(raw).ok_or_else(|| ExtractError::Format("no JSON object found".into()))?;
    let value: Value = serde_json::from_str(candidate).map_err(|e| ExtractError::Parse(e.to_string()))?;
    let Value::Object(map) = value else {
        unreachable!("a balanced brace span parses to an object or fails");
    };
    for key in map.keys() {
        if !FIELD_NAMES.contains(&key.as_str()) {
            return Err(ExtractError::Schema(format!("unexpected field {key:?}")));
        }
    }
    let mut strings = Vec::with_capacity(FIELD_NAMES.len());
    for name in FIELD_NAMES {
        match map.get(name) {
            None => return Err(ExtractError::Schema(format!("missing field {name:?}"))),
            Some(Value::String(s)) => strings.push(s.clone()),
            Some(other) => {
                return Err(ExtractError::Schema(format!("field {name:?} must be a string, got {}", type_name(other))))
            }
        }
    }
    if split_keywords(&strings[5]).is_empty() {
        return Err(ExtractError::Schema("Keywords is empty".into()));
    }
    let mut it = strings.into_iter();
    let mut next = || it.next().unwrap_or_default();
    Ok(BehaviorDescription::from_fields(DescriptionFields {
        overall: next(),
        head: next(),
        limb: next(),
        torso: next(),
        others: next(),
        keywords: next(),
    }))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
