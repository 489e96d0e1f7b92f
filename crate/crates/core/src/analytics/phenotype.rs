//! Behavior-proportion profiles and nearest-reference group prediction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, EthogramTrack};
use crate::finegrained::FineGrainedLabels;

/// Spread below which a feature counts as constant across references.
const CONSTANT_SD: f64 = 1e-12;

pub fn major_feature(label: &str) -> String {
    format!("major:{label}")
}

pub fn fine_feature(major: &str, part: &str, key: &str) -> String {
    format!("fine:{major}:{part}:{key}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeProfile {
    pub subject: String,
    pub group: Option<String>,
    /// Raw feature values by name.
    pub features: BTreeMap<String, f64>,
}

/// Major-behavior shares of the track, plus, for each behavior in
/// `fine_majors`, the share of that behavior's frames carrying each
/// fine-grained key.
pub fn build_profile(
    subject: &str,
    group: Option<&str>,
    track: &EthogramTrack,
    fine: Option<(&FineGrainedLabels, &[String])>,
) -> Result<PhenotypeProfile, AnalyticsError> {
    if track.samples.is_empty() {
        return Err(AnalyticsError::Parameter(format!("track of {subject:?} is empty")));
    }
    let mut features: BTreeMap<String, f64> =
        track.proportions().into_iter().map(|(l, p)| (major_feature(&l), p)).collect();
    if let Some((labels, majors)) = fine {
        for major in majors {
            let frames: Vec<u64> = track.samples.iter().filter(|s| &s.label == major).map(|s| s.frame_id).collect();
            if frames.is_empty() {
                continue;
            }
            let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
            for f in &frames {
                let Some(parts) = labels.frames.get(f) else { continue };
                for (part, keys) in parts {
                    for key in keys.iter().collect::<BTreeSet<_>>() {
                        *counts.entry((part.to_string(), key.clone())).or_default() += 1;
                    }
                }
            }
            for ((part, key), c) in counts {
                features.insert(fine_feature(major, &part, &key), c as f64 / frames.len() as f64);
            }
        }
    }
    Ok(PhenotypeProfile { subject: subject.into(), group: group.map(String::from), features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Distance to the nearest single reference of each group.
    #[default]
    Nearest,
    /// Distance to the mean standardized vector of each group.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictOptions {
    pub mode: ReferenceMode,
    /// Per-feature weights on squared standardized differences; missing
    /// features weigh 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistance {
    pub reference: String,
    pub group: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: String,
    pub actual: Option<String>,
    pub predicted: String,
    pub distances: Vec<ReferenceDistance>,
    pub group_distances: BTreeMap<String, f64>,
    /// Feature → (mean, sd) over the reference set, for the features used.
    pub standardization: BTreeMap<String, (f64, f64)>,
    /// Features constant across references.
    pub dropped: Vec<String>,
}

/// Standardizes features against the references (population sd), drops
/// constant ones and predicts the group at the smallest Euclidean distance;
/// equal distances go to the alphabetically first group.
pub fn predict_phenotype(
    test: &PhenotypeProfile,
    references: &[PhenotypeProfile],
    options: &PredictOptions,
) -> Result<Prediction, AnalyticsError> {
    let mut groups = BTreeSet::new();
    for r in references {
        let g = r
            .group
            .as_ref()
            .ok_or_else(|| AnalyticsError::Parameter(format!("reference {:?} has no group", r.subject)))?;
        groups.insert(g.clone());
    }
    if groups.len() < 2 {
        return Err(AnalyticsError::Parameter(format!("need references from at least 2 groups, got {}", groups.len())));
    }
    if let Some((f, w)) = options.weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
        return Err(AnalyticsError::Parameter(format!("weight {w} for {f} must be non-negative")));
    }
    let names: BTreeSet<&String> =
        references.iter().chain(std::iter::once(test)).flat_map(|p| p.features.keys()).collect();
    let value = |p: &PhenotypeProfile, f: &str| p.features.get(f).copied().unwrap_or(0.0);
    let n = references.len() as f64;
    let mut standardization = BTreeMap::new();
    let mut dropped = Vec::new();
    for f in names {
        let mean = references.iter().map(|r| value(r, f)).sum::<f64>() / n;
        let sd = (references.iter().map(|r| (value(r, f) - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd <= CONSTANT_SD {
            log::info!("feature {f} is constant across references; dropped");
            dropped.push(f.clone());
        } else {
            standardization.insert(f.clone(), (mean, sd));
        }
    }
    if standardization.is_empty() {
        return Err(AnalyticsError::Parameter("no feature varies across the references".into()));
    }
    let z = |p: &PhenotypeProfile| -> Vec<f64> {
        standardization.iter().map(|(f, (m, s))| (value(p, f) - m) / s).collect()
    };
    let w: Vec<f64> = standardization.keys().map(|f| options.weights.get(f).copied().unwrap_or(1.0)).collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(&w).map(|((x, y), wt)| wt * (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let zt = z(test);
    let zr: Vec<Vec<f64>> = references.iter().map(z).collect();
    let distances: Vec<ReferenceDistance> = references
        .iter()
        .zip(&zr)
        .map(|(r, v)| ReferenceDistance {
            reference: r.subject.clone(),
            group: r.group.clone().unwrap_or_default(),
            distance: dist(&zt, v),
        })
        .collect();
    let group_distances: BTreeMap<String, f64> = groups
        .iter()
        .map(|g| {
            let members: Vec<usize> = (0..references.len()).filter(|&i| distances[i].group == *g).collect();
            let d = match options.mode {
                ReferenceMode::Nearest => members.iter().map(|&i| distances[i].distance).fold(f64::INFINITY, f64::min),
                ReferenceMode::Centroid => {
                    let mut c = vec![0.0; zt.len()];
                    for &i in &members {
                        for (ci, x) in c.iter_mut().zip(&zr[i]) {
                            *ci += x / members.len() as f64;
                        }
                    }
                    dist(&zt, &c)
                }
            };
            (g.clone(), d)
        })
        .collect();
    let predicted = group_distances
        .iter()
        .fold(None::<(&String, f64)>, |best, (g, d)| match best {
            Some((_, bd)) if bd <= *d => best,
            _ => Some((g, *d)),
        })
        .map(|(g, _)| g.clone())
        .expect("at least two groups");
    Ok(Prediction {
        subject: test.subject.clone(),
        actual: test.group.clone(),
        predicted,
        distances,
        group_distances,
        standardization,
        dropped,
    })
}

/// Predicts every labeled profile against all the others.
pub fn leave_one_out(profiles: &[PhenotypeProfile], options: &PredictOptions) -> Result<Vec<Prediction>, AnalyticsError> {
    (0..profiles.len())
        .map(|i| {
            let refs: Vec<PhenotypeProfile> =
                profiles.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p.clone()).collect();
            predict_phenotype(&profiles[i], &refs, options)
        })
        .collect()
}

/// Share of each actual group's subjects predicted as each group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub groups: Vec<String>,
    /// actual → predicted → proportion; one row per actual group present.
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PredictionMatrix {
    /// Rows = predicted group, columns = actual group.
    pub fn to_csv(&self) -> String {
        let actual: Vec<&String> = self.rows.keys().collect();
        let mut out = String::from("predicted");
        for a in &actual {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for p in &self.groups {
            out.push_str(p);
            for a in &actual {
                out.push_str(&format!(",{}", self.rows[*a].get(p).copied().unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn prediction_matrix(pairs: &[(String, String)]) -> PredictionMatrix {
    let groups: BTreeSet<&String> = pairs.iter().flat_map(|(a, p)| [a, p]).collect();
    let mut counts: BTreeMap<&String, BTreeMap<&String, usize>> = BTreeMap::new();
    for (a, p) in pairs {
        *counts.entry(a).or_default().entry(p).or_default() += 1;
    }
    let rows = counts
        .into_iter()
        .map(|(a, preds)| {
            let total: usize = preds.values().sum();
            let row = groups
                .iter()
                .map(|g| ((*g).clone(), preds.get(g).copied().unwrap_or(0) as f64 / total as f64))
                .collect();
            (a.clone(), row)
        })
        .collect();
    PredictionMatrix { groups: groups.into_iter().cloned().collect(), rows }
}
