//! Average-linkage agglomerative clustering.
//!
//! Uses the nearest-neighbor chain algorithm over a condensed distance
//! matrix updated in place with the Lance–Williams rule for average linkage.
//! The output follows the usual linkage-matrix conventions: points are
//! clusters `0..n`, merge row `i` creates cluster `n + i`, rows are sorted by
//! distance and each row lists the smaller id first.

use serde::{Deserialize, Serialize};

use super::distance::{condensed_index, CondensedMatrix};
use super::ClusteringError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageRow {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageTree {
    pub n: usize,
    pub rows: Vec<LinkageRow>,
}

/// Builds the average-linkage tree. Nearest-neighbor ties prefer the
/// previous chain element, then the smaller point index.
pub fn build_linkage(dist: &CondensedMatrix) -> Result<LinkageTree, ClusteringError> {
    let n = dist.n();
    if n < 2 {
        return Err(ClusteringError::Parameter(format!("linkage needs at least 2 vectors, got {n}")));
    }
    let mut d = dist.clone().into_vec();
    let at = |i: usize, j: usize| if i < j { condensed_index(n, i, j) } else { condensed_index(n, j, i) };
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    // (a, b, distance) with b the slot that holds the merged cluster
    let mut merges: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);

    for _ in 0..n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster remains"));
        }
        let (x, y, dmin) = loop {
            let x = *chain.last().unwrap();
            let (mut y, mut best) = if chain.len() > 1 {
                let prev = chain[chain.len() - 2];
                (prev, d[at(x, prev)])
            } else {
                (usize::MAX, f64::INFINITY)
            };
            for i in 0..n {
                if i != x && active[i] {
                    let v = d[at(x, i)];
                    if v < best || (v == best && y == usize::MAX) {
                        best = v;
                        y = i;
                    }
                }
            }
            if chain.len() > 1 && y == chain[chain.len() - 2] {
                break (x, y, best);
            }
            chain.push(y);
        };
        chain.pop();
        chain.pop();
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for i in 0..n {
            if active[i] && i != a && i != b {
                let merged = (sa * d[at(i, a)] + sb * d[at(i, b)]) / (sa + sb);
                d[at(i, b)] = merged;
            }
        }
        size[b] += size[a];
        active[a] = false;
        merges.push((a, b, dmin));
    }

    // Stable sort by distance, then relabel with union-find so that row i
    // creates cluster n + i.
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&p, &q| merges[p].2.total_cmp(&merges[q].2));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut label: Vec<usize> = (0..n).collect();
    let mut csize = vec![1usize; n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut rows = Vec::with_capacity(n - 1);
    for (step, &k) in order.iter().enumerate() {
        let (a, b, dist) = merges[k];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let (la, lb) = (label[ra], label[rb]);
        let sz = csize[ra] + csize[rb];
        parent[ra] = rb;
        label[rb] = n + step;
        csize[rb] = sz;
        rows.push(LinkageRow { left: la.min(lb), right: la.max(lb), distance: dist, size: sz });
    }
    Ok(LinkageTree { n, rows })
}

impl LinkageTree {
    /// Flat clustering into `k` clusters by applying the first `n − k`
    /// merges. Cluster ids are numbered by ascending smallest member.
    pub fn maxclust(&self, k: usize) -> Vec<usize> {
        let n = self.n;
        let k = k.clamp(1, n);
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (step, row) in self.rows.iter().take(n - k).enumerate() {
            let new = n + step;
            let (a, b) = (find(&mut parent, row.left), find(&mut parent, row.right));
            parent[a] = new;
            parent[b] = new;
        }
        let mut id_of_root = std::collections::HashMap::new();
        (0..n)
            .map(|i| {
                let r = find(&mut parent, i);
                let next = id_of_root.len();
                *id_of_root.entry(r).or_insert(next)
            })
            .collect()
    }
}
