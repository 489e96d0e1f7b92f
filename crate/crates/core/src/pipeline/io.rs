use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::annotation::{split_keywords, BehaviorDescription};

/// One sampled frame of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub session_id: String,
    pub frame_index: u64,
    pub time_s: f64,
    /// Image reference per camera, in rig order.
    pub view_image_refs: Vec<String>,
    pub keypoints_2d: String,
    pub pose_3d: String,
    pub velocity: String,
    #[serde(default)]
    pub description: Option<DescriptionRecord>,
    #[serde(default)]
    pub embedding_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionMetadata {
    pub frame_index: u64,
    pub time_s: f64,
    pub quality_score: Option<f64>,
    pub provider: String,
}

/// A line of `descriptions.jsonl`: the six source fields plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
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
    pub metadata: DescriptionMetadata,
}

impl DescriptionRecord {
    pub fn new(d: &BehaviorDescription, metadata: DescriptionMetadata) -> Self {
        Self {
            overall: d.overall.clone(),
            head: d.head.clone(),
            limb: d.limb.clone(),
            torso: d.torso.clone(),
            others: d.others.clone(),
            keywords: d.keywords.join(", "),
            metadata,
        }
    }

    pub fn description(&self) -> BehaviorDescription {
        BehaviorDescription {
            overall: self.overall.clone(),
            head: self.head.clone(),
            limb: self.limb.clone(),
            torso: self.torso.clone(),
            others: self.others.clone(),
            keywords: split_keywords(&self.keywords),
            quality_score: self.metadata.quality_score,
        }
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records().map(|x| x.map_err(PipelineError::from)).collect()
}
