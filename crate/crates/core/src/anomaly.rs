//! Isolation-forest novelty scoring with seed-varied consensus.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ESTIMATORS: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;
pub const DEFAULT_CONTAMINATION: f64 = 0.0001;
pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_QUORUM: f64 = 0.6;

/// Slack for products like `contamination * n` that should land on an
/// integer but carry rounding error.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AnomalyError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("schema error: model has dimension {expected}, vector has {got}")]
    Schema { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_estimators: DEFAULT_ESTIMATORS, subsample: DEFAULT_SUBSAMPLE, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { dim: usize, value: f64, left: usize, right: usize },
    Leaf { size: usize },
}

/// Nodes in creation order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub params: ForestParams,
    /// Effective subsample size, `min(subsample, n)`.
    pub psi: usize,
    pub height_limit: usize,
    pub dim: usize,
    pub trees: Vec<IsolationTree>,
}

/// Harmonic number H(k), summed exactly term by term.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// Average path length of an unsuccessful search in a binary search tree of
/// `m` points; 0 for `m <= 1`.
pub fn average_path_length(m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    2.0 * harmonic(m - 1) - 2.0 * (m - 1) as f64 / m as f64
}

pub fn height_limit(psi: usize) -> usize {
    (psi as f64).log2().ceil() as usize
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn build_node(
    vectors: &[Vec<f64>],
    idx: Vec<usize>,
    depth: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    nodes.push(Node::Leaf { size: idx.len() });
    if depth >= limit || idx.len() <= 1 {
        return me;
    }
    let dim = vectors[idx[0]].len();
    let mut lo = vectors[idx[0]].clone();
    let mut hi = lo.clone();
    for &i in &idx[1..] {
        for (d, &x) in vectors[i].iter().enumerate() {
            if x < lo[d] {
                lo[d] = x;
            }
            if x > hi[d] {
                hi[d] = x;
            }
        }
    }
    let usable: Vec<usize> = (0..dim).filter(|&d| lo[d] < hi[d]).collect();
    if usable.is_empty() {
        return me;
    }
    let d = usable[rng.gen_range(0..usable.len())];
    let value = rng.gen_range(lo[d]..hi[d]);
    let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| vectors[i][d] <= value);
    let left = build_node(vectors, l, depth + 1, limit, rng, nodes);
    let right = build_node(vectors, r, depth + 1, limit, rng, nodes);
    nodes[me] = Node::Split { dim: d, value, left, right };
    me
}

/// Fits the forest. Tree `t` draws from its own random stream, so the result
/// does not depend on how trees are scheduled.
pub fn fit(vectors: &[Vec<f64>], params: ForestParams) -> Result<IsolationForestModel, AnomalyError> {
    let n = vectors.len();
    if n < 2 {
        return Err(AnomalyError::Parameter(format!("isolation forest needs at least 2 vectors, got {n}")));
    }
    if params.n_estimators == 0 || params.subsample < 2 {
        return Err(AnomalyError::Parameter("need n_estimators >= 1 and subsample >= 2".into()));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(AnomalyError::Schema { expected: dim, got: v.len() });
    }
    let psi = params.subsample.min(n);
    let limit = height_limit(psi);
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let mut idx = sample(&mut rng, n, psi).into_vec();
            idx.sort_unstable();
            let mut nodes = Vec::new();
            build_node(vectors, idx, 0, limit, &mut rng, &mut nodes);
            IsolationTree { nodes }
        })
        .collect();
    Ok(IsolationForestModel { params, psi, height_limit: limit, dim, trees })
}

impl IsolationTree {
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[node] {
                Node::Split { dim, value, left, right } => {
                    node = if x[dim] <= value { left } else { right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(size),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

impl IsolationForestModel {
    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64, AnomalyError> {
        if x.len() != self.dim {
            return Err(AnomalyError::Schema { expected: self.dim, got: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(−E[h] / c(ψ))`.
    pub fn score(&self, x: &[f64]) -> Result<f64, AnomalyError> {
        let h = self.mean_path_length(x)?;
        Ok(2f64.powf(-h / average_path_length(self.psi)))
    }

    pub fn score_all(&self, vectors: &[Vec<f64>]) -> Result<Vec<f64>, AnomalyError> {
        vectors.par_iter().map(|v| self.score(v)).collect()
    }
}

/// `ceil(contamination · n)`, tolerant of rounding in the product.
pub fn flag_count(contamination: f64, n: usize) -> usize {
    ((contamination * n as f64) - COUNT_EPS).ceil().max(0.0) as usize
}

/// Frame ids of the top `ceil(contamination · n)` scores, highest first;
/// equal scores go to the lower frame id.
pub fn flag_outliers(frame_ids: &[u64], scores: &[f64], contamination: f64) -> Result<Vec<u64>, AnomalyError> {
    if !(contamination > 0.0 && contamination <= 0.5) {
        return Err(AnomalyError::Parameter(format!("contamination {contamination} outside (0, 0.5]")));
    }
    if frame_ids.len() != scores.len() {
        return Err(AnomalyError::Parameter("frame ids and scores differ in length".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(frame_ids[a].cmp(&frame_ids[b])));
    Ok(order.into_iter().take(flag_count(contamination, scores.len())).map(|i| frame_ids[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyParams {
    pub forest: ForestParams,
    pub contamination: f64,
    pub runs: usize,
    pub quorum: f64,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            contamination: DEFAULT_CONTAMINATION,
            runs: DEFAULT_RUNS,
            quorum: DEFAULT_QUORUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelFrame {
    pub frame_id: u64,
    /// Mean score over runs.
    pub score: f64,
    /// Runs that flagged the frame.
    pub consensus: usize,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub params: AnomalyParams,
    pub frames: usize,
    pub flagged_per_run: Vec<Vec<u64>>,
    /// Frames reaching the quorum, by descending consensus then score.
    pub flagged: Vec<NovelFrame>,
    /// Mean score per frame, in input order.
    pub scores: Vec<(u64, f64)>,
}

/// Seed of consensus run `r`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add(run as u64)
}

/// Fits `runs` forests with seeds `seed, seed + 1, …`, flags each run and
/// keeps frames flagged in at least `quorum · runs` of them.
pub fn consensus_detect(
    frame_ids: &[u64],
    vectors: &[Vec<f64>],
    descriptions: &BTreeMap<u64, String>,
    params: AnomalyParams,
) -> Result<NoveltyReport, AnomalyError> {
    if params.runs == 0 {
        return Err(AnomalyError::Parameter("runs must be at least 1".into()));
    }
    if !(params.quorum > 0.0 && params.quorum <= 1.0) {
        return Err(AnomalyError::Parameter(format!("quorum {} outside (0, 1]", params.quorum)));
    }
    if frame_ids.len() != vectors.len() {
        return Err(AnomalyError::Parameter("frame ids and vectors differ in length".into()));
    }
    let n = vectors.len();
    let mut mean = vec![0.0; n];
    let mut flagged_per_run = Vec::with_capacity(params.runs);
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for r in 0..params.runs {
        let forest = ForestParams { seed: run_seed(params.forest.seed, r), ..params.forest };
        let model = fit(vectors, forest)?;
        let scores = model.score_all(vectors)?;
        for (m, s) in mean.iter_mut().zip(&scores) {
            *m += s / params.runs as f64;
        }
        let flags = flag_outliers(frame_ids, &scores, params.contamination)?;
        for f in &flags {
            *counts.entry(*f).or_default() += 1;
        }
        flagged_per_run.push(flags);
    }
    let need = params.quorum * params.runs as f64 - COUNT_EPS;
    let index: BTreeMap<u64, usize> = frame_ids.iter().enumerate().map(|(i, f)| (*f, i)).collect();
    let mut flagged: Vec<NovelFrame> = counts
        .into_iter()
        .filter(|(_, c)| *c as f64 >= need)
        .map(|(f, c)| NovelFrame {
            frame_id: f,
            score: mean[index[&f]],
            consensus: c,
            description: descriptions.get(&f).cloned(),
        })
        .collect();
    flagged.sort_by(|a, b| {
        b.consensus.cmp(&a.consensus).then(b.score.total_cmp(&a.score)).then(a.frame_id.cmp(&b.frame_id))
    });
    Ok(NoveltyReport {
        params,
        frames: n,
        flagged_per_run,
        flagged,
        scores: frame_ids.iter().copied().zip(mean).collect(),
    })
}
