//! Minimum-size cut loop and noise reassignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::linkage::LinkageTree;
use super::ClusteringError;
use crate::embedding::cosine_similarity;

/// Assignment of a frame that belongs to an undersized cluster.
pub const NOISE: i64 = -1;

/// One pass of the cut loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPass {
    pub cut_count: usize,
    pub clusters: usize,
    pub undersized: usize,
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutResult {
    /// Cluster id per point, or [`NOISE`].
    pub assignments: Vec<i64>,
    pub passes: Vec<CutPass>,
}

/// Cuts the tree into `theta_c` clusters, marks clusters smaller than
/// `theta_e` as noise and, while fewer than `theta_c` clusters survive,
/// raises the cut count by the number of undersized clusters and cuts again.
/// The cut count is capped at n.
///
/// Surviving clusters are numbered from 0 by ascending smallest member.
pub fn cut_with_min_size(tree: &LinkageTree, theta_c: usize, theta_e: usize) -> Result<CutResult, ClusteringError> {
    let n = tree.n;
    if theta_c < 1 || theta_e < 1 {
        return Err(ClusteringError::Parameter("theta_c and theta_e must be at least 1".into()));
    }
    if theta_c.saturating_mul(theta_e) > n {
        return Err(ClusteringError::Parameter(format!(
            "theta_c * theta_e = {} exceeds the {n} points",
            theta_c * theta_e
        )));
    }
    let mut passes = Vec::new();
    let mut cut_count = theta_c;
    loop {
        cut_count = cut_count.min(n);
        let labels = tree.maxclust(cut_count);
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &labels {
            *sizes.entry(l).or_default() += 1;
        }
        let undersized = sizes.values().filter(|&&s| s < theta_e).count();
        let survivors = sizes.len() - undersized;
        passes.push(CutPass { cut_count, clusters: sizes.len(), undersized, survivors });
        if survivors >= theta_c {
            // maxclust numbers clusters by smallest member, so renumbering the
            // survivors in label order keeps that property
            let mut renumber = BTreeMap::new();
            for (&label, &size) in &sizes {
                if size >= theta_e {
                    let next = renumber.len() as i64;
                    renumber.insert(label, next);
                }
            }
            let assignments = labels.iter().map(|l| renumber.get(l).copied().unwrap_or(NOISE)).collect();
            return Ok(CutResult { assignments, passes });
        }
        if cut_count == n {
            return Err(ClusteringError::Infeasible { requested: theta_c, achieved: survivors, cut_count });
        }
        cut_count += undersized;
    }
}

/// Moves every noise point into the cluster whose centroid is most
/// cosine-similar; ties go to the lower cluster id.
pub fn reassign_noise(assignments: &[i64], vectors: &[Vec<f64>]) -> Result<Vec<usize>, ClusteringError> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sums: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
    for (a, v) in assignments.iter().zip(vectors) {
        if *a != NOISE {
            let e = sums.entry(*a).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, x) in e.0.iter_mut().zip(v) {
                *s += x;
            }
            e.1 += 1;
        }
    }
    if sums.is_empty() {
        return Err(ClusteringError::Infeasible { requested: 1, achieved: 0, cut_count: 0 });
    }
    let centroids: Vec<(i64, Vec<f64>)> = sums
        .into_iter()
        .map(|(id, (s, count))| (id, s.into_iter().map(|x| x / count as f64).collect()))
        .collect();
    assignments
        .iter()
        .zip(vectors)
        .map(|(&a, v)| {
            if a != NOISE {
                return Ok(a as usize);
            }
            let mut best: Option<(i64, f64)> = None;
            for (id, c) in &centroids {
                let Ok(sim) = cosine_similarity(v, c) else { continue };
                if best.is_none_or(|(_, b)| sim > b) {
                    best = Some((*id, sim));
                }
            }
            best.map(|(id, _)| id as usize)
                .ok_or_else(|| ClusteringError::Parameter("noise point has zero norm or no usable centroid".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::distance::CondensedMatrix;
    use crate::clustering::linkage::build_linkage;

    fn tree_1d(points: &[f64]) -> LinkageTree {
        build_linkage(&CondensedMatrix::from_fn(points.len(), |i, j| (points[i] - points[j]).abs())).unwrap()
    }

    fn blobs_with_strays() -> Vec<f64> {
        let mut p = Vec::new();
        for c in [0.0, 100.0, 200.0] {
            for k in 0..50 {
                p.push(c + k as f64 * 0.01);
            }
        }
        p.push(-500.0);
        p.push(700.0);
        p
    }

    #[test]
    fn strays_become_noise_with_trace() {
        let t = tree_1d(&blobs_with_strays());
        let r = cut_with_min_size(&t, 3, 5).unwrap();
        assert_eq!(r.assignments[150], NOISE);
        assert_eq!(r.assignments[151], NOISE);
        for (i, a) in r.assignments[..150].iter().enumerate() {
            assert_eq!(*a, (i / 50) as i64);
        }
        assert_eq!(
            r.passes,
            vec![
                CutPass { cut_count: 3, clusters: 3, undersized: 2, survivors: 1 },
                CutPass { cut_count: 5, clusters: 5, undersized: 2, survivors: 3 },
            ]
        );
    }

    #[test]
    fn theta_c_one_gives_single_cluster() {
        let t = tree_1d(&[0.0, 1.0, 2.0, 3.0]);
        let r = cut_with_min_size(&t, 1, 4).unwrap();
        assert_eq!(r.assignments, vec![0; 4]);
    }

    #[test]
    fn parameter_and_infeasible_errors() {
        let t = tree_1d(&[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(cut_with_min_size(&t, 0, 1), Err(ClusteringError::Parameter(_))));
        assert!(matches!(cut_with_min_size(&t, 3, 2), Err(ClusteringError::Parameter(_))));
        // two tight pairs far apart plus nothing else: 2 clusters of 2 cannot
        // satisfy theta_e = 3 at any cut
        let t = tree_1d(&[0.0, 0.1, 50.0, 50.1, 100.0, 100.1]);
        assert!(matches!(cut_with_min_size(&t, 2, 3), Err(ClusteringError::Infeasible { requested: 2, .. })));
    }

    #[test]
    fn noise_joins_nearest_centroid() {
        let vectors = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9], vec![0.95, 0.05]];
        let a = reassign_noise(&[0, 0, 1, 1, NOISE], &vectors).unwrap();
        assert_eq!(a, vec![0, 0, 1, 1, 0]);
        assert_eq!(reassign_noise(&[0, 1], &vectors[..2]).unwrap(), vec![0, 1]);
        let tie = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(reassign_noise(&[0, 1, NOISE], &tie).unwrap(), vec![0, 1, 0]);
        assert!(reassign_noise(&[NOISE, NOISE], &tie[..2]).is_err());
    }
}
