//! Two-stage behavior clustering of description embeddings.
//!
//! Stage one builds an average-linkage tree on cosine distances and cuts it
//! with a minimum cluster size, reassigning the leftover noise to the nearest
//! centroid. Stage two labels clusters by their most frequent keywords and
//! lets a [`merge::Merger`] fold together clusters that describe the same
//! behavior.

pub mod cut;
pub mod distance;
pub mod keywords;
pub mod linkage;
pub mod merge;
pub mod pca;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cut::{cut_with_min_size, reassign_noise, CutPass, CutResult, NOISE};
pub use distance::{cosine_distance_matrix, CondensedMatrix};
pub use keywords::{top_keywords, KeywordCount, LABEL_SIZE};
pub use linkage::{build_linkage, LinkageRow, LinkageTree};
pub use merge::{merge_clusters, MergeAction, Merger, MergerRegistry, OfflineMerger, ProviderMerger};
pub use pca::{project, project_2d, Projection};

use crate::embedding::{cosine_similarity, EmbeddingError};
use crate::provider::ProviderError;

/// Linkage method recorded in manifests.
pub const LINKAGE_METHOD: &str = "average";
/// Exemplar frames listed per cluster in reports.
pub const EXEMPLARS: usize = 5;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("infeasible: asked for {requested} clusters, {achieved} survived at cut count {cut_count}")]
    Infeasible { requested: usize, achieved: usize, cut_count: usize },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub theta_c: usize,
    pub theta_e: usize,
    /// Project onto this many principal components before clustering.
    #[serde(default)]
    pub pre_projection: Option<usize>,
}

impl ClusterParams {
    pub fn new(theta_c: usize, theta_e: usize) -> Self {
        Self { theta_c, theta_e, pre_projection: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub params: ClusterParams,
    pub linkage_method: String,
    pub merger: String,
    pub frame_ids: Vec<u64>,
    /// Final cluster id per frame, aligned with `frame_ids`.
    pub assignments: Vec<usize>,
    /// Top keywords per final cluster.
    pub labels: BTreeMap<usize, Vec<KeywordCount>>,
    pub merge_history: Vec<MergeAction>,
    /// Set when the merger's proposal was rejected and the unmerged
    /// clusters were kept.
    pub merge_rejected: Option<String>,
    pub cut_passes: Vec<CutPass>,
    /// Frames that were noise after the cut and got reassigned.
    pub reassigned: Vec<u64>,
    pub linkage: LinkageTree,
}

/// Runs both stages. `keywords` and `vectors` are aligned with `frame_ids`.
pub fn cluster(
    frame_ids: &[u64],
    vectors: &[Vec<f64>],
    keywords: &[Vec<String>],
    params: ClusterParams,
    merger: &dyn Merger,
) -> Result<ClusterModel, ClusteringError> {
    let n = frame_ids.len();
    if vectors.len() != n || keywords.len() != n {
        return Err(ClusteringError::Parameter(format!(
            "{n} frames but {} vectors and {} keyword lists",
            vectors.len(),
            keywords.len()
        )));
    }
    if frame_ids.iter().collect::<BTreeSet<_>>().len() != n {
        return Err(ClusteringError::Parameter("duplicate frame ids".into()));
    }
    let projected;
    let space: &[Vec<f64>] = match params.pre_projection {
        Some(k) => {
            projected = project(vectors, k)?.coords;
            &projected
        }
        None => vectors,
    };
    let dist = cosine_distance_matrix(space)?;
    let tree = build_linkage(&dist)?;
    let cut = cut_with_min_size(&tree, params.theta_c, params.theta_e)?;
    let reassigned = frame_ids
        .iter()
        .zip(&cut.assignments)
        .filter(|(_, a)| **a == NOISE)
        .map(|(f, _)| *f)
        .collect();
    let assignments = reassign_noise(&cut.assignments, space)?;

    let (assignments, labels, merge_history, merge_rejected) = match merge_clusters(assignments.clone(), keywords, merger) {
        Ok(out) => (out.assignments, out.labels, out.history, None),
        Err(ClusteringError::ContractViolation(msg)) => {
            log::warn!("merge proposal rejected: {msg}");
            let labels = top_keywords(&assignments, keywords, LABEL_SIZE);
            (assignments, labels, Vec::new(), Some(msg))
        }
        Err(e) => return Err(e),
    };
    Ok(ClusterModel {
        params,
        linkage_method: LINKAGE_METHOD.into(),
        merger: merger.name(),
        frame_ids: frame_ids.to_vec(),
        assignments,
        labels,
        merge_history,
        merge_rejected,
        cut_passes: cut.passes,
        reassigned,
        linkage: tree,
    })
}

impl ClusterModel {
    pub fn sizes(&self) -> BTreeMap<usize, usize> {
        let mut s = BTreeMap::new();
        for &a in &self.assignments {
            *s.entry(a).or_default() += 1;
        }
        s
    }

    /// Display name per cluster: its top keyword, with ` #id` appended when
    /// several clusters share one.
    pub fn behavior_names(&self) -> BTreeMap<usize, String> {
        let top: BTreeMap<usize, String> = self
            .labels
            .iter()
            .map(|(c, l)| (*c, l.first().map_or_else(|| format!("cluster {c}"), |k| k.keyword.clone())))
            .collect();
        let mut uses: BTreeMap<&str, usize> = BTreeMap::new();
        for name in top.values() {
            *uses.entry(name).or_default() += 1;
        }
        top.iter()
            .map(|(c, name)| {
                let n = if uses[name.as_str()] > 1 { format!("{name} #{c}") } else { name.clone() };
                (*c, n)
            })
            .collect()
    }

    /// `(frame_id, behavior)` rows in frame order.
    pub fn table(&self) -> Vec<(u64, String)> {
        let names = self.behavior_names();
        let mut rows: Vec<(u64, String)> =
            self.frame_ids.iter().zip(&self.assignments).map(|(f, a)| (*f, names[a].clone())).collect();
        rows.sort_by_key(|r| r.0);
        rows
    }

    pub fn cluster_of(&self, frame_id: u64) -> Option<usize> {
        self.frame_ids.iter().position(|f| *f == frame_id).map(|i| self.assignments[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub label: String,
    pub keywords: Vec<KeywordCount>,
    pub size: usize,
    /// Frames closest to the cluster centroid.
    pub exemplars: Vec<u64>,
    /// Mean of the members' 2D coordinates.
    pub center_2d: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPoint {
    pub frame_id: u64,
    pub cluster: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub params: ClusterParams,
    pub merger: String,
    pub clusters: Vec<ClusterSummary>,
    pub points: Vec<ReportPoint>,
    pub merge_history: Vec<MergeAction>,
    pub merge_rejected: Option<String>,
    pub cut_passes: Vec<CutPass>,
    pub projection_degenerate: bool,
}

/// Builds the report for `model`; `vectors` are aligned with its frames.
pub fn report(model: &ClusterModel, vectors: &[Vec<f64>]) -> Result<ClusterReport, ClusteringError> {
    if vectors.len() != model.frame_ids.len() {
        return Err(ClusteringError::Parameter("vectors do not match the model's frames".into()));
    }
    let proj = project_2d(vectors)?;
    let names = model.behavior_names();
    let dim = vectors.first().map_or(0, Vec::len);
    let mut clusters = Vec::new();
    for (&id, &size) in &model.sizes() {
        let members: Vec<usize> = (0..model.assignments.len()).filter(|&i| model.assignments[i] == id).collect();
        let mut centroid = vec![0.0; dim];
        let mut center = [0.0; 2];
        for &i in &members {
            for (c, x) in centroid.iter_mut().zip(&vectors[i]) {
                *c += x / size as f64;
            }
            center[0] += proj.coords[i][0] / size as f64;
            center[1] += proj.coords[i][1] / size as f64;
        }
        let mut ranked: Vec<(u64, f64)> = members
            .iter()
            .map(|&i| (model.frame_ids[i], cosine_similarity(&vectors[i], &centroid).unwrap_or(f64::NEG_INFINITY)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        clusters.push(ClusterSummary {
            id,
            label: names[&id].clone(),
            keywords: model.labels.get(&id).cloned().unwrap_or_default(),
            size,
            exemplars: ranked.into_iter().take(EXEMPLARS).map(|r| r.0).collect(),
            center_2d: center,
        });
    }
    let points = model
        .frame_ids
        .iter()
        .zip(&model.assignments)
        .zip(&proj.coords)
        .map(|((f, a), c)| ReportPoint { frame_id: *f, cluster: *a, x: c[0], y: c[1] })
        .collect();
    Ok(ClusterReport {
        params: model.params,
        merger: model.merger.clone(),
        clusters,
        points,
        merge_history: model.merge_history.clone(),
        merge_rejected: model.merge_rejected.clone(),
        cut_passes: model.cut_passes.clone(),
        projection_degenerate: proj.degenerate,
    })
}
