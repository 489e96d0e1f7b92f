//! Multi-view triangulation: linear (DLT) initialization on undistorted
//! normalized coordinates, then Levenberg–Marquardt refinement of the
//! pixel reprojection error
//!
//! ```text
//! cost(X) = Σ_i w_i · ‖(u_i, v_i) − π_i(X)‖²
//! ```
//!
//! where `π_i` is the full projection of camera `i` (including distortion).

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::CameraRig;
use super::schema::NUM_KEYPOINTS;
use super::KinematicsError;

/// A 2D detection of one keypoint in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation2D {
    pub camera_id: String,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

impl Observation2D {
    pub fn new(camera_id: impl Into<String>, u: f64, v: f64, confidence: f64) -> Self {
        Self {
            camera_id: camera_id.into(),
            u,
            v,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Every usable observation counts equally.
    #[default]
    Uniform,
    /// Observations are weighted by their detector confidence.
    Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmSettings {
    pub initial_lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step improves the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            max_iterations: 50,
            relative_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriangulationOptions {
    /// Observations need a confidence strictly above this to be used.
    pub confidence_threshold: f64,
    pub weighting: Weighting,
    pub lm: LmSettings,
}

impl Default for TriangulationOptions {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.0,
            weighting: Weighting::Uniform,
            lm: LmSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulatedPoint {
    pub position: Vector3<f64>,
    /// RMS pixel reprojection error over the views used.
    pub residual_rms: f64,
    pub views_used: usize,
    /// Weighted squared reprojection cost at the DLT estimate.
    pub initial_cost: f64,
    /// Weighted squared reprojection cost after refinement.
    pub final_cost: f64,
    pub iterations: usize,
}

struct Usable<'a> {
    camera: &'a super::CameraModel,
    pixel: Vector2<f64>,
    weight: f64,
}

fn usable_observations<'a>(
    observations: &[Observation2D],
    rig: &'a CameraRig,
    opts: &TriangulationOptions,
) -> Result<Vec<Usable<'a>>, KinematicsError> {
    let mut out = Vec::with_capacity(observations.len());
    for obs in observations {
        if !(obs.confidence > opts.confidence_threshold) || !obs.u.is_finite() || !obs.v.is_finite() {
            continue;
        }
        let camera = rig
            .get(&obs.camera_id)
            .ok_or_else(|| KinematicsError::UnknownCamera(obs.camera_id.clone()))?;
        let weight = match opts.weighting {
            Weighting::Uniform => 1.0,
            Weighting::Confidence => obs.confidence,
        };
        out.push(Usable {
            camera,
            pixel: Vector2::new(obs.u, obs.v),
            weight,
        });
    }
    Ok(out)
}

/// Number of observations that pass the confidence filter and name a known
/// camera.
pub fn count_usable(observations: &[Observation2D], rig: &CameraRig, opts: &TriangulationOptions) -> usize {
    observations
        .iter()
        .filter(|o| o.confidence > opts.confidence_threshold && o.u.is_finite() && o.v.is_finite() && rig.get(&o.camera_id).is_some())
        .count()
}

fn dlt(views: &[Usable<'_>]) -> Result<Vector3<f64>, KinematicsError> {
    let mut a = DMatrix::<f64>::zeros(2 * views.len(), 4);
    for (i, view) in views.iter().enumerate() {
        let xy = view.camera.undistort_point(view.pixel.x, view.pixel.y)?;
        let rt = view.camera.extrinsic_matrix();
        let sw = view.weight.sqrt();
        for (k, coord) in [xy.x, xy.y].into_iter().enumerate() {
            let mut row = rt.row(2) * coord - rt.row(k);
            let n = row.norm();
            if n > 0.0 {
                row /= n;
            }
            a.row_mut(2 * i + k).copy_from(&(row * sw));
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma = &svd.singular_values;
    let max_sigma = sigma.max();
    if !(max_sigma > 0.0) {
        return Err(KinematicsError::DegenerateGeometry("empty design matrix".into()));
    }
    let rank = sigma.iter().filter(|s| **s > max_sigma * 1e-10).count();
    if rank < 3 {
        return Err(KinematicsError::DegenerateGeometry(format!(
            "DLT design matrix has rank {rank} (< 3); rays are identical or parallel"
        )));
    }
    let (min_idx, _) = sigma
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let h = v_t.row(min_idx);
    let w = h[3];
    if w.abs() <= 1e-12 * h.norm() {
        return Err(KinematicsError::DegenerateGeometry("DLT solution lies at infinity".into()));
    }
    Ok(Vector3::new(h[0] / w, h[1] / w, h[2] / w))
}

fn cost(views: &[Usable<'_>], x: &Vector3<f64>) -> Result<f64, KinematicsError> {
    let mut total = 0.0;
    for v in views {
        let e = v.camera.project(x)? - v.pixel;
        total += v.weight * e.norm_squared();
    }
    Ok(total)
}

fn refine(views: &[Usable<'_>], start: Vector3<f64>, lm: &LmSettings) -> Result<(Vector3<f64>, f64, usize), KinematicsError> {
    let mut x = start;
    let mut current = cost(views, &x)?;
    let mut lambda = lm.initial_lambda;
    let mut iterations = 0;
    while iterations < lm.max_iterations && current > 0.0 {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for v in views {
            let (uv, jac) = v.camera.project_with_jacobian(&x)?;
            let r = uv - v.pixel;
            jtj += jac.transpose() * jac * v.weight;
            jtr += jac.transpose() * r * v.weight;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let candidate = x - chol.solve(&jtr);
            match cost(views, &candidate) {
                Ok(c) if c < current => {
                    let improvement = (current - c) / current;
                    x = candidate;
                    current = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if improvement < lm.relative_tolerance {
                        return Ok((x, current, iterations));
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok((x, current, iterations))
}

/// Triangulates one keypoint from its observations across the rig.
pub fn triangulate(
    observations: &[Observation2D],
    rig: &CameraRig,
    opts: &TriangulationOptions,
) -> Result<TriangulatedPoint, KinematicsError> {
    let views = usable_observations(observations, rig, opts)?;
    if views.len() < 2 {
        return Err(KinematicsError::InsufficientViews(views.len()));
    }
    let init = dlt(&views)?;
    let initial_cost = cost(&views, &init).map_err(|e| {
        KinematicsError::DegenerateGeometry(format!("linear estimate is not in front of every camera: {e}"))
    })?;
    let (position, final_cost, iterations) = refine(&views, init, &opts.lm)?;
    let sq: f64 = views
        .iter()
        .map(|v| (v.camera.project(&position).map(|p| (p - v.pixel).norm_squared())).unwrap_or(f64::NAN))
        .sum();
    Ok(TriangulatedPoint {
        position,
        residual_rms: (sq / views.len() as f64).sqrt(),
        views_used: views.len(),
        initial_cost,
        final_cost,
        iterations,
    })
}

/// 3D skeleton for one frame. Invalid keypoints are `None` and are never
/// interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub frame_index: u64,
    /// World coordinates in cm; `null` when the keypoint is invalid.
    pub points: Vec<Option<[f64; 3]>>,
    /// RMS reprojection error (px) over valid keypoints.
    pub residual_rms: f64,
    pub views_used: Vec<usize>,
    pub point_residuals: Vec<Option<f64>>,
}

impl Pose3D {
    pub fn empty(frame_index: u64) -> Self {
        Self {
            frame_index,
            points: vec![None; NUM_KEYPOINTS],
            residual_rms: 0.0,
            views_used: vec![0; NUM_KEYPOINTS],
            point_residuals: vec![None; NUM_KEYPOINTS],
        }
    }

    pub fn point(&self, keypoint: usize) -> Option<Vector3<f64>> {
        self.points.get(keypoint).copied().flatten().map(Vector3::from)
    }

    pub fn is_valid(&self, keypoint: usize) -> bool {
        self.point(keypoint).is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

/// Triangulates every keypoint of one frame. `per_keypoint[j]` holds the
/// observations of keypoint `j`; missing trailing entries count as empty.
pub fn triangulate_pose(
    frame_index: u64,
    per_keypoint: &[Vec<Observation2D>],
    rig: &CameraRig,
    opts: &TriangulationOptions,
) -> Pose3D {
    let mut pose = Pose3D::empty(frame_index);
    let mut sq_sum = 0.0;
    for (j, obs) in per_keypoint.iter().take(NUM_KEYPOINTS).enumerate() {
        pose.views_used[j] = count_usable(obs, rig, opts);
        if pose.views_used[j] < 2 {
            continue;
        }
        if let Ok(tp) = triangulate(obs, rig, opts) {
            if tp.position.iter().all(|c| c.is_finite()) && tp.residual_rms.is_finite() {
                pose.points[j] = Some([tp.position.x, tp.position.y, tp.position.z]);
                pose.point_residuals[j] = Some(tp.residual_rms);
                sq_sum += tp.residual_rms * tp.residual_rms;
            }
        }
    }
    let valid = pose.valid_count();
    if valid > 0 {
        pose.residual_rms = (sq_sum / valid as f64).sqrt();
    }
    pose
}
