//! Principal-component projection.
//!
//! Works on the distinct rows weighted by multiplicity, finds the leading
//! components by block power iteration with a Rayleigh–Ritz step, and fixes
//! each component's sign so its largest-magnitude loading is positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distance::dedupe;
use super::ClusteringError;

const MAX_ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-12;
const OVERSAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// One row of `k` coordinates per input vector.
    pub coords: Vec<Vec<f64>>,
    /// Variance captured by each component.
    pub variance: Vec<f64>,
    /// Set when the input has no variance; all coordinates are then zero.
    pub degenerate: bool,
}

/// Projects onto the leading `k` principal components.
pub fn project(vectors: &[Vec<f64>], k: usize) -> Result<Projection, ClusteringError> {
    let n = vectors.len();
    if n < 2 {
        return Err(ClusteringError::Parameter(format!("projection needs at least 2 vectors, got {n}")));
    }
    if k == 0 {
        return Err(ClusteringError::Parameter("projection needs k >= 1".into()));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(ClusteringError::Parameter("vectors differ in length".into()));
    }
    let (unique, map) = dedupe(vectors);
    let u = unique.len();
    let mut weight = vec![0.0; u];
    for &m in &map {
        weight[m] += 1.0;
    }
    let mut mean = vec![0.0; d];
    for (row, w) in unique.iter().zip(&weight) {
        for (m, x) in mean.iter_mut().zip(row.iter()) {
            *m += w * x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let x = DMatrix::from_fn(u, d, |i, j| unique[i][j] - mean[j]);
    let w = DVector::from_vec(weight);
    let total: f64 = (0..u).map(|i| w[i] * x.row(i).norm_squared()).sum::<f64>() / n as f64;

    let zero = || Projection { coords: vec![vec![0.0; k]; n], variance: vec![0.0; k], degenerate: true };
    if total == 0.0 {
        return Ok(zero());
    }

    // covariance applied implicitly: C v = Xᵀ W X v / n
    let apply = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut y = &x * v;
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= w[i] / n as f64;
        }
        x.transpose() * y
    };

    let b = (k + OVERSAMPLE).min(d).min(u);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut v = DMatrix::from_fn(d, b, |_, _| rng.gen::<f64>() - 0.5);
    v = v.qr().q();
    let mut prev = vec![f64::INFINITY; b];
    let mut ritz = (DVector::zeros(b), DMatrix::identity(b, b));
    for _ in 0..MAX_ITERATIONS {
        let av = apply(&v);
        let t = v.transpose() * &av;
        let t = (&t + t.transpose()) * 0.5;
        let eig = SymmetricEigen::new(t);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let done = vals
            .iter()
            .zip(&prev)
            .take(k)
            .all(|(a, p)| (a - p).abs() <= TOLERANCE * total.max(a.abs()));
        prev = vals;
        ritz = (eig.eigenvalues, eig.eigenvectors);
        if done {
            break;
        }
        v = av.qr().q();
    }
    let (vals, vecs) = ritz;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));

    let kk = k.min(b);
    let mut components = Vec::with_capacity(kk);
    let mut variance = Vec::with_capacity(k);
    for &o in order.iter().take(kk) {
        let mut c = &v * vecs.column(o);
        c.normalize_mut();
        let (imax, _) = c.iter().enumerate().fold((0, 0.0f64), |best, (i, &val)| {
            if val.abs() > best.1 { (i, val.abs()) } else { best }
        });
        if c[imax] < 0.0 {
            c.neg_mut();
        }
        variance.push(vals[o].max(0.0));
        components.push(c);
    }
    variance.resize(k, 0.0);

    let unique_coords: Vec<Vec<f64>> = (0..u)
        .map(|i| {
            let row = x.row(i);
            let mut out: Vec<f64> = components.iter().map(|c| row.dot(&c.transpose())).collect();
            out.resize(k, 0.0);
            out
        })
        .collect();
    Ok(Projection { coords: map.iter().map(|&m| unique_coords[m].clone()).collect(), variance, degenerate: false })
}

/// Two-dimensional projection for scatter plots.
pub fn project_2d(vectors: &[Vec<f64>]) -> Result<Projection, ClusteringError> {
    project(vectors, 2)
}
