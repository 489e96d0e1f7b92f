//! Calibrated pinhole cameras with Brown–Conrady lens distortion.
//!
//! ```text
//! world point X  ->  Xc = R·X + t                (world -> camera)
//!                ->  x = Xc.x / Xc.z, y = Xc.y / Xc.z
//!                ->  r² = x² + y²
//!                    radial = 1 + k1·r² + k2·r⁴ + k3·r⁶
//!                    xd = x·radial + 2·p1·x·y + p2·(r² + 2x²)
//!                    yd = y·radial + p1·(r² + 2y²) + 2·p2·x·y
//!                ->  u = f·xd + cx, v = f·yd + cy
//! ```
//!
//! Calibration files store rotation row-major (9 numbers), translation in
//! world centimetres and intrinsics in pixels.

use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::KinematicsError;

/// Fixed-point undistortion stops after this many iterations.
pub const UNDISTORT_MAX_ITERATIONS: usize = 20;
/// Fixed-point undistortion stops once the update is smaller than this.
pub const UNDISTORT_STEP_TOLERANCE: f64 = 1e-12;
/// Camera-frame depth at or below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-12;

const ROTATION_TOLERANCE: f64 = 1e-9;

/// Brown–Conrady coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub fn is_identity(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    fn radial(&self, r2: f64) -> f64 {
        1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    fn tangential(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        Vector2::new(
            2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Maps ideal normalized coordinates to distorted normalized coordinates.
    pub fn distort(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let r2 = p.norm_squared();
        p * self.radial(r2) + self.tangential(p)
    }

    /// Jacobian of [`Distortion::distort`] with respect to its input.
    pub fn jacobian(&self, p: &Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = self.radial(r2);
        // d(radial)/d(r²)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let drx = dradial * 2.0 * x;
        let dry = dradial * 2.0 * y;
        Matrix2::new(
            radial + x * drx + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            x * dry + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            y * drx + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            radial + y * dry + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
        )
    }

    /// Inverts [`Distortion::distort`] by fixed-point iteration.
    pub fn undistort(&self, distorted: &Vector2<f64>) -> Result<Vector2<f64>, KinematicsError> {
        if self.is_identity() {
            return Ok(*distorted);
        }
        let mut x = *distorted;
        for _ in 0..UNDISTORT_MAX_ITERATIONS {
            let r2 = x.norm_squared();
            let next = (distorted - self.tangential(&x)) / self.radial(r2);
            let step = (next - x).norm();
            x = next;
            if !x.iter().all(|c| c.is_finite()) {
                break;
            }
            if step < UNDISTORT_STEP_TOLERANCE {
                return Ok(x);
            }
        }
        Err(KinematicsError::NonConvergence {
            iterations: UNDISTORT_MAX_ITERATIONS,
            last: [x.x, x.y],
        })
    }
}

/// One calibrated camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    pub id: String,
    /// Focal length in pixels.
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    /// World to camera translation (world units, cm).
    pub translation: Vector3<f64>,
    /// Image size in pixels, when known; used to clamp bounding boxes.
    pub image_size: Option<(u32, u32)>,
}

/// On-disk calibration record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    id: String,
    f: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    k1: f64,
    #[serde(default)]
    k2: f64,
    #[serde(default)]
    k3: f64,
    #[serde(default)]
    p1: f64,
    #[serde(default)]
    p2: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = KinematicsError;

    fn try_from(r: CameraRecord) -> Result<Self, Self::Error> {
        let image_size = match (r.width, r.height) {
            (Some(w), Some(h)) => Some((w, h)),
            _ => None,
        };
        CameraModel::new(
            r.id,
            r.f,
            (r.cx, r.cy),
            Distortion {
                k1: r.k1,
                k2: r.k2,
                k3: r.k3,
                p1: r.p1,
                p2: r.p2,
            },
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from_column_slice(&r.translation),
        )
        .map(|c| c.with_image_size(image_size))
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row * 3 + col] = c.rotation[(row, col)];
            }
        }
        CameraRecord {
            id: c.id,
            f: c.f,
            cx: c.cx,
            cy: c.cy,
            k1: c.distortion.k1,
            k2: c.distortion.k2,
            k3: c.distortion.k3,
            p1: c.distortion.p1,
            p2: c.distortion.p2,
            rotation,
            translation: [c.translation.x, c.translation.y, c.translation.z],
            width: c.image_size.map(|s| s.0),
            height: c.image_size.map(|s| s.1),
        }
    }
}

impl CameraModel {
    /// Builds a camera, checking `f > 0` and that `rotation` is a proper
    /// rotation (orthonormal, determinant +1, within 1e-9).
    pub fn new(
        id: impl Into<String>,
        f: f64,
        principal_point: (f64, f64),
        distortion: Distortion,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, KinematicsError> {
        let id = id.into();
        let invalid = |reason: String| KinematicsError::InvalidCamera {
            id: id.clone(),
            reason,
        };
        if !(f > 0.0 && f.is_finite()) {
            return Err(invalid(format!("focal length must be positive, got {f}")));
        }
        let orth_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(orth_err <= ROTATION_TOLERANCE) {
            return Err(invalid(format!(
                "rotation is not orthonormal (max deviation {orth_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(invalid(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(invalid("translation is not finite".into()));
        }
        Ok(Self {
            id,
            f,
            cx: principal_point.0,
            cy: principal_point.1,
            distortion,
            rotation,
            translation,
            image_size: None,
        })
    }

    pub fn with_image_size(mut self, size: Option<(u32, u32)>) -> Self {
        self.image_size = size;
        self
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pinhole projection matrix `K·[R|t]` (distortion excluded).
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let k = Matrix3::new(self.f, 0.0, self.cx, 0.0, self.f, self.cy, 0.0, 0.0, 1.0);
        k * self.extrinsic_matrix()
    }

    /// `[R|t]`
    pub fn extrinsic_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        rt
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Pixel coordinates to ideal (undistorted) normalized image coordinates.
    pub fn undistort_point(&self, u: f64, v: f64) -> Result<Vector2<f64>, KinematicsError> {
        let distorted = Vector2::new((u - self.cx) / self.f, (v - self.cy) / self.f);
        self.distortion.undistort(&distorted)
    }

    /// Projects a world point to pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, KinematicsError> {
        let pc = self.to_camera_frame(point);
        if pc.z <= MIN_DEPTH {
            return Err(KinematicsError::BehindCamera {
                id: self.id.clone(),
                depth: pc.z,
            });
        }
        let ideal = Vector2::new(pc.x / pc.z, pc.y / pc.z);
        let d = self.distortion.distort(&ideal);
        Ok(Vector2::new(self.f * d.x + self.cx, self.f * d.y + self.cy))
    }

    /// Projection and its Jacobian with respect to the world point.
    pub fn project_with_jacobian(
        &self,
        point: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>), KinematicsError> {
        let pc = self.to_camera_frame(point);
        if pc.z <= MIN_DEPTH {
            return Err(KinematicsError::BehindCamera {
                id: self.id.clone(),
                depth: pc.z,
            });
        }
        let iz = 1.0 / pc.z;
        let ideal = Vector2::new(pc.x * iz, pc.y * iz);
        let d = self.distortion.distort(&ideal);
        let d_persp = Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
        let jac = self.distortion.jacobian(&ideal) * d_persp * self.rotation * self.f;
        Ok((Vector2::new(self.f * d.x + self.cx, self.f * d.y + self.cy), jac))
    }
}

/// A set of calibrated cameras loaded from one calibration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    #[serde(default = "default_units")]
    pub units: RigUnits,
    pub cameras: Vec<CameraModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigUnits {
    pub intrinsics: String,
    pub world: String,
}

fn default_units() -> RigUnits {
    RigUnits {
        intrinsics: "pixels".into(),
        world: "cm".into(),
    }
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self, KinematicsError> {
        let mut seen = std::collections::HashSet::new();
        for c in &cameras {
            if !seen.insert(c.id.as_str()) {
                return Err(KinematicsError::InvalidCamera {
                    id: c.id.clone(),
                    reason: "duplicate camera id in rig".into(),
                });
            }
        }
        Ok(Self {
            units: default_units(),
            cameras,
        })
    }

    pub fn get(&self, id: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let rig: CameraRig = serde_json::from_str(text)
            .map_err(|e| KinematicsError::Calibration(e.to_string()))?;
        CameraRig::new(rig.cameras).map(|r| CameraRig {
            units: rig.units,
            ..r
        })
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Calibration(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serializes")
    }
}

/// Rotation for a camera at `position` looking at `target`, with image
/// rows pointing away from `up`.
pub fn look_at_rotation(position: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - position).normalize();
    let mut down = -up + z * up.dot(&z);
    if down.norm() < 1e-9 {
        // looking along `up`; pick any perpendicular image axis
        down = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        down -= z * down.dot(&z);
    }
    let y = down.normalize();
    let x = y.cross(&z);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector4;

    fn ideal_camera(f: f64, c: (f64, f64)) -> CameraModel {
        CameraModel::new("c", f, c, Distortion::default(), Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let cam = ideal_camera(1200.0, (960.0, 540.0));
        let p = cam.undistort_point(960.0, 540.0).unwrap();
        assert_eq!(p, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn identity_model_is_offset_over_focal() {
        let cam = ideal_camera(1200.0, (960.0, 540.0));
        let p = cam.undistort_point(960.0 + 1200.0, 540.0).unwrap();
        assert_eq!(p, Vector2::new(1.0, 0.0));
    }

    #[test]
    fn undistort_inverts_forward_model() {
        let dist = Distortion {
            k1: -0.1,
            ..Default::default()
        };
        for &(x, y) in &[(0.3, -0.2), (0.05, 0.4), (-0.45, -0.1), (0.0, 0.0)] {
            let ideal = Vector2::new(x, y);
            let back = dist.undistort(&dist.distort(&ideal)).unwrap();
            assert_abs_diff_eq!(back, ideal, epsilon = 1e-9);
        }
        let full = Distortion {
            k1: -0.12,
            k2: 0.03,
            k3: -0.004,
            p1: 0.001,
            p2: -0.0007,
        };
        let ideal = Vector2::new(0.21, -0.33);
        assert_abs_diff_eq!(full.undistort(&full.distort(&ideal)).unwrap(), ideal, epsilon = 1e-9);
    }

    #[test]
    fn undistort_reports_nonconvergence() {
        let wild = Distortion {
            k1: 5.0,
            ..Default::default()
        };
        match wild.undistort(&Vector2::new(2.0, 2.0)) {
            Err(KinematicsError::NonConvergence { iterations, .. }) => assert_eq!(iterations, 20),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn distortion_jacobian_matches_finite_differences() {
        let dist = Distortion {
            k1: -0.2,
            k2: 0.05,
            k3: 0.01,
            p1: 0.002,
            p2: -0.003,
        };
        let p = Vector2::new(0.3, -0.25);
        let jac = dist.jacobian(&p);
        let h = 1e-7;
        for axis in 0..2 {
            let mut dp = Vector2::zeros();
            dp[axis] = h;
            let fd = (dist.distort(&(p + dp)) - dist.distort(&(p - dp))) / (2.0 * h);
            assert_abs_diff_eq!(jac.column(axis).into_owned(), fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = ideal_camera(1500.0, (1920.0, 1080.0));
        let uv = cam.project(&Vector3::new(0.0, 0.0, 50.0)).unwrap();
        assert_eq!(uv, Vector2::new(1920.0, 1080.0));
    }

    #[test]
    fn pinhole_identity_projection() {
        let cam = ideal_camera(1.0, (0.0, 0.0));
        assert_eq!(cam.project(&Vector3::new(1.0, 1.0, 1.0)).unwrap(), Vector2::new(1.0, 1.0));
    }

    #[test]
    fn behind_camera_is_rejected() {
        let cam = ideal_camera(1.0, (0.0, 0.0));
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(KinematicsError::BehindCamera { .. })
        ));
        assert!(matches!(
            cam.project(&Vector3::new(1.0, 0.0, 0.0)),
            Err(KinematicsError::BehindCamera { .. })
        ));
    }

    #[test]
    fn projection_matches_homogeneous_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pos = Vector3::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
            let target = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let r = look_at_rotation(&pos, &target, &Vector3::z());
            let cam = CameraModel::new("r", rng.gen_range(500.0..3000.0), (rng.gen_range(0.0..4000.0), rng.gen_range(0.0..2000.0)), Distortion::default(), r, -(r * pos)).unwrap();
            let x = target + Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            // independent route: P·[x;1], then divide by the third row
            let h = cam.projection_matrix() * Vector4::new(x.x, x.y, x.z, 1.0);
            let oracle = Vector2::new(h.x / h.z, h.y / h.z);
            assert_abs_diff_eq!(cam.project(&x).unwrap(), oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_jacobian_matches_finite_differences() {
        let pos = Vector3::new(70.0, 10.0, 5.0);
        let r = look_at_rotation(&pos, &Vector3::zeros(), &Vector3::z());
        let cam = CameraModel::new(
            "j",
            2000.0,
            (1920.0, 1080.0),
            Distortion { k1: -0.08, k2: 0.01, k3: 0.0, p1: 0.001, p2: 0.0005 },
            r,
            -(r * pos),
        )
        .unwrap();
        let x = Vector3::new(1.0, -2.0, 3.0);
        let (_, jac) = cam.project_with_jacobian(&x).unwrap();
        let h = 1e-5;
        for axis in 0..3 {
            let mut dx = Vector3::zeros();
            dx[axis] = h;
            let fd = (cam.project(&(x + dx)).unwrap() - cam.project(&(x - dx)).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(jac.column(axis).into_owned(), fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn rejects_invalid_rotation_and_focal() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new("a", 1.0, (0.0, 0.0), Distortion::default(), bad, Vector3::zeros()).is_err());
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new("a", 1.0, (0.0, 0.0), Distortion::default(), reflection, Vector3::zeros()).is_err());
        assert!(CameraModel::new("a", 0.0, (0.0, 0.0), Distortion::default(), Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn calibration_json_round_trip() {
        let text = r#"{
            "cameras": [
                {"id": "cam0", "f": 2000.0, "cx": 1920.0, "cy": 1080.0,
                 "k1": -0.05, "k2": 0.01, "k3": 0.0, "p1": 0.0, "p2": 0.0,
                 "rotation": [1,0,0, 0,1,0, 0,0,1], "translation": [0, 0, 75],
                 "width": 3840, "height": 2160}
            ]
        }"#;
        let rig = CameraRig::from_json(text).unwrap();
        assert_eq!(rig.units.world, "cm");
        let cam = rig.get("cam0").unwrap();
        assert_eq!(cam.image_size, Some((3840, 2160)));
        assert_eq!(cam.translation.z, 75.0);
        let again = CameraRig::from_json(&rig.to_json()).unwrap();
        assert_eq!(again, rig);
    }

    #[test]
    fn calibration_rejects_duplicate_ids_and_bad_rotation() {
        let dup = r#"{"cameras": [
            {"id": "a", "f": 1, "cx": 0, "cy": 0, "rotation": [1,0,0,0,1,0,0,0,1], "translation": [0,0,0]},
            {"id": "a", "f": 1, "cx": 0, "cy": 0, "rotation": [1,0,0,0,1,0,0,0,1], "translation": [0,0,0]}
        ]}"#;
        assert!(CameraRig::from_json(dup).is_err());
        let bad = r#"{"cameras": [
            {"id": "a", "f": 1, "cx": 0, "cy": 0, "rotation": [2,0,0,0,1,0,0,0,1], "translation": [0,0,0]}
        ]}"#;
        assert!(CameraRig::from_json(bad).is_err());
    }
}
