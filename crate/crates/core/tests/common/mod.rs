#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use ethokit::analytics::PhenotypeProfile;
use ethokit::kinematics::{CameraRig, Observation2D, NUM_KEYPOINTS};
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// 24 points of a mouse-sized body: within 10 cm of the arena centre, 0.5 to 6 cm up.
pub fn skeleton(rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let cx = rng.gen_range(-10.0..10.0);
    let cy = rng.gen_range(-10.0..10.0);
    (0..NUM_KEYPOINTS)
        .map(|_| Vector3::new(cx + rng.gen_range(-5.0..5.0), cy + rng.gen_range(-3.0..3.0), rng.gen_range(0.5..6.0)))
        .collect()
}

/// Per-keypoint observations of `points` in every camera, with Gaussian pixel noise.
pub fn observe(rig: &CameraRig, points: &[Vector3<f64>], noise_px: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<Observation2D>> {
    let normal = Normal::new(0.0, noise_px.max(f64::MIN_POSITIVE)).unwrap();
    points
        .iter()
        .map(|p| {
            rig.cameras
                .iter()
                .map(|c| {
                    let uv = c.project(p).unwrap();
                    let (du, dv) = if noise_px > 0.0 { (normal.sample(rng), normal.sample(rng)) } else { (0.0, 0.0) };
                    Observation2D::new(c.id.clone(), uv.x + du, uv.y + dv, 1.0)
                })
                .collect()
        })
        .collect()
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sum_a * sum_b / choose2(a.len() as u64);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// `per_blob` unit vectors around each of three orthogonal directions.
pub fn three_blobs(per_blob: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::new();
    let mut truth = Vec::new();
    for b in 0..3 {
        for _ in 0..per_blob {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
            v[b] += 1.0;
            vectors.push(v);
            truth.push(b);
        }
    }
    (vectors, truth)
}

fn c(m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    let mut h = 0.0;
    for i in 1..m {
        h += 1.0 / i as f64;
    }
    2.0 * h - 2.0 * (m - 1) as f64 / m as f64
}

/// Grows one isolation tree from scratch with the documented random stream
/// (ChaCha8 seeded with the forest seed, stream = tree index; subsample
/// drawn first, then per node a usable dimension and a split value, left
/// subtree before right) and returns each query's path length.
fn oracle_tree(vectors: &[Vec<f64>], psi: usize, seed: u64, tree: usize, queries: &[Vec<f64>]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    let mut idx = sample(&mut rng, vectors.len(), psi).into_vec();
    idx.sort_unstable();
    let limit = (psi as f64).log2().ceil() as usize;
    let mut out = vec![0.0; queries.len()];
    let all: Vec<usize> = (0..queries.len()).collect();
    grow(vectors, &idx, 0, limit, &mut rng, queries, &all, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn grow(
    vectors: &[Vec<f64>],
    idx: &[usize],
    depth: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
    queries: &[Vec<f64>],
    here: &[usize],
    out: &mut [f64],
) {
    let leaf = |out: &mut [f64]| {
        for &q in here {
            out[q] = depth as f64 + c(idx.len());
        }
    };
    if depth >= limit || idx.len() <= 1 {
        return leaf(out);
    }
    let dim = vectors[idx[0]].len();
    let usable: Vec<(usize, f64, f64)> = (0..dim)
        .filter_map(|d| {
            let lo = idx.iter().map(|&i| vectors[i][d]).fold(f64::INFINITY, f64::min);
            let hi = idx.iter().map(|&i| vectors[i][d]).fold(f64::NEG_INFINITY, f64::max);
            (lo < hi).then_some((d, lo, hi))
        })
        .collect();
    if usable.is_empty() {
        return leaf(out);
    }
    let (d, lo, hi) = usable[rng.gen_range(0..usable.len())];
    let value = rng.gen_range(lo..hi);
    let left: Vec<usize> = idx.iter().copied().filter(|&i| vectors[i][d] <= value).collect();
    let right: Vec<usize> = idx.iter().copied().filter(|&i| vectors[i][d] > value).collect();
    let ql: Vec<usize> = here.iter().copied().filter(|&q| queries[q][d] <= value).collect();
    let qr: Vec<usize> = here.iter().copied().filter(|&q| queries[q][d] > value).collect();
    grow(vectors, &left, depth + 1, limit, rng, queries, &ql, out);
    grow(vectors, &right, depth + 1, limit, rng, queries, &qr, out);
}

/// Mean path length of each query over `trees` oracle trees.
pub fn oracle_mean_paths(vectors: &[Vec<f64>], trees: usize, subsample: usize, seed: u64, queries: &[Vec<f64>]) -> Vec<f64> {
    let psi = subsample.min(vectors.len());
    let mut sum = vec![0.0; queries.len()];
    for t in 0..trees {
        for (s, p) in sum.iter_mut().zip(oracle_tree(vectors, psi, seed, t, queries)) {
            *s += p;
        }
    }
    sum.into_iter().map(|s| s / trees as f64).collect()
}

/// 10,000 tight inliers plus one far point at index 0.
pub fn planted_cloud(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Vec<f64>> = (0..10_000).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    v.insert(0, vec![25.0; 8]);
    v
}

/// Six groups of four subjects on six features. Group `g` peaks on feature
/// `g` and half-peaks on `g + 1`; per-subject jitter stays below 0.25.
pub fn separable_cohort(seed: u64) -> Vec<PhenotypeProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for g in 0..6 {
        for s in 0..4 {
            let features = (0..6)
                .map(|f| {
                    let centre = if f == g { 6.0 } else if f == (g + 1) % 6 { 3.0 } else { 0.0 };
                    (format!("f{f}"), centre + rng.gen_range(-0.25..0.25))
                })
                .collect();
            out.push(PhenotypeProfile { subject: format!("g{g}-s{s}"), group: Some(format!("group-{g}")), features });
        }
    }
    out
}

/// SHA-256 of every artifact file below `root/artifacts`, manifests excluded
/// since they record wall-clock timings.
pub fn artifact_digests(root: &std::path::Path) -> BTreeMap<String, String> {
    use sha2::{Digest, Sha256};
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join("artifacts")];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n != "manifests") {
                    stack.push(p);
                }
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}
