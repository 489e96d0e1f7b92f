//! Pairwise cosine distances in condensed (upper-triangle, row-major) form.

use std::collections::HashMap;

use rayon::prelude::*;

use super::ClusteringError;
use crate::embedding::{cosine_from_parts, EmbeddingError};

/// Upper triangle of a symmetric n×n matrix with zero diagonal, stored row
/// by row: (0,1), (0,2), …, (0,n−1), (1,2), …
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedMatrix {
    n: usize,
    data: Vec<f64>,
}

#[inline]
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

impl CondensedMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let data = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let f = &f;
                (i + 1..n).map(move |j| f(i, j))
            })
            .collect();
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.data[condensed_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.data[condensed_index(self.n, j, i)],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Sparse copy of a dense vector: ascending indices of the non-zero entries.
struct Sparse {
    idx: Vec<u32>,
    val: Vec<f64>,
    norm_sq: f64,
}

impl Sparse {
    fn new(v: &[f64]) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &x) in v.iter().enumerate() {
            if x != 0.0 {
                idx.push(i as u32);
                val.push(x);
            }
        }
        let norm_sq = v.iter().map(|x| x * x).sum();
        Self { idx, val, norm_sq }
    }

    /// Sums products over shared non-zero indices in ascending order. Terms
    /// where either factor is zero contribute ±0 and leave a dense
    /// left-to-right sum unchanged, so the result is bit-identical to it.
    fn dot(&self, other: &Sparse) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut s = 0.0;
        while a < self.idx.len() && b < other.idx.len() {
            match self.idx[a].cmp(&other.idx[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    s += self.val[a] * other.val[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        s
    }
}

/// Groups bit-identical vectors. Returns the distinct vectors in first
/// occurrence order and, per input, the index of its distinct vector.
pub fn dedupe(vectors: &[Vec<f64>]) -> (Vec<&Vec<f64>>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut map = Vec::with_capacity(vectors.len());
    for v in vectors {
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        let id = *seen.entry(key).or_insert_with(|| {
            unique.push(v);
            unique.len() - 1
        });
        map.push(id);
    }
    (unique, map)
}

/// Cosine distance `1 − cos(a, b)` between every pair of vectors.
pub fn cosine_distance_matrix(vectors: &[Vec<f64>]) -> Result<CondensedMatrix, ClusteringError> {
    let dim = vectors.first().map_or(0, Vec::len);
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(ClusteringError::Embedding(EmbeddingError::DimMismatch { expected: dim, got: v.len() }));
    }
    let (unique, map) = dedupe(vectors);
    let sparse: Vec<Sparse> = unique.par_iter().map(|v| Sparse::new(v)).collect();
    if sparse.iter().any(|s| s.norm_sq == 0.0) {
        return Err(ClusteringError::Embedding(EmbeddingError::ZeroNorm));
    }
    let u = sparse.len();
    let pair = |i: usize, j: usize| {
        let (a, b) = (&sparse[i], &sparse[j]);
        let cos = cosine_from_parts(a.dot(b), a.norm_sq, b.norm_sq).expect("norms checked");
        1.0 - cos
    };
    let unique_d = CondensedMatrix::from_fn(u, pair);
    let self_d: Vec<f64> = (0..u).map(|i| pair(i, i)).collect();
    Ok(CondensedMatrix::from_fn(vectors.len(), |i, j| {
        let (a, b) = (map[i], map[j]);
        if a == b {
            self_d[a]
        } else {
            unique_d.get(a, b)
        }
    }))
}
