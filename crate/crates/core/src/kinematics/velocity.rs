//! Per-keypoint velocities, signed speeds along the body axis, and the
//! derived speed summary that feeds the annotation prompt.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::schema::{FOREPAW_L, FOREPAW_R, HINDPAW_L, HINDPAW_R, NUM_KEYPOINTS, SNOUT, SPINE_G, SPINE_H};
use super::triangulate::Pose3D;
use super::KinematicsError;

/// How a displacement between consecutive frames becomes a velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityMode {
    /// `Δk · fps`: displacement over the inter-frame interval, in cm/s.
    #[default]
    PerSecond,
    /// `Δk / fps`, the formula taken literally.
    Literal,
}

impl VelocityMode {
    fn scale(self, fps: f64) -> f64 {
        match self {
            VelocityMode::PerSecond => fps,
            VelocityMode::Literal => 1.0 / fps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityRecord {
    pub frame_index: u64,
    /// Velocity vectors in cm/s; `null` if the keypoint is invalid in either frame.
    pub vectors: Vec<Option<[f64; 3]>>,
    /// Signed speeds relative to the SpineG - SpineH axis of the current frame.
    pub signed_speed: Vec<Option<f64>>,
    /// Speed of the SpineG/SpineH midpoint.
    pub overall_speed: Option<f64>,
}

impl VelocityRecord {
    /// A record with every value missing, e.g. for the first frame of a session.
    pub fn missing(frame_index: u64) -> Self {
        Self {
            frame_index,
            vectors: vec![None; NUM_KEYPOINTS],
            signed_speed: vec![None; NUM_KEYPOINTS],
            overall_speed: None,
        }
    }

    pub fn vector(&self, keypoint: usize) -> Option<Vector3<f64>> {
        self.vectors.get(keypoint).copied().flatten().map(Vector3::from)
    }

    pub fn speed(&self, keypoint: usize) -> Option<f64> {
        self.vector(keypoint).map(|v| v.norm())
    }
}

/// Signed speed of `v` relative to the body axis `d = spine_g − spine_h`.
///
/// The sign is that of `angle(v, d) − π/2`, computed as `−sign(v·d)` so that
/// the perpendicular case is exactly zero. Motion along `d` is negative.
pub fn signed_speed(v: &Vector3<f64>, spine_g: &Vector3<f64>, spine_h: &Vector3<f64>) -> Result<f64, KinematicsError> {
    let d = spine_g - spine_h;
    if d.norm() == 0.0 {
        return Err(KinematicsError::DegenerateAxis);
    }
    let magnitude = v.norm();
    if magnitude == 0.0 {
        return Ok(0.0);
    }
    let dot = v.dot(&d);
    if dot == 0.0 {
        return Ok(0.0);
    }
    Ok(-dot.signum() * magnitude)
}

/// Velocities of every keypoint between `prev` and `pose`.
pub fn velocity(pose: &Pose3D, prev: &Pose3D, fps: f64, mode: VelocityMode) -> Result<VelocityRecord, KinematicsError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(KinematicsError::Parameter(format!("fps must be positive, got {fps}")));
    }
    let scale = mode.scale(fps);
    let mut record = VelocityRecord::missing(pose.frame_index);
    for j in 0..NUM_KEYPOINTS {
        if let (Some(now), Some(before)) = (pose.point(j), prev.point(j)) {
            let v = (now - before) * scale;
            record.vectors[j] = Some([v.x, v.y, v.z]);
        }
    }
    if let (Some(g), Some(h)) = (pose.point(SPINE_G), pose.point(SPINE_H)) {
        for j in 0..NUM_KEYPOINTS {
            if let Some(v) = record.vector(j) {
                record.signed_speed[j] = signed_speed(&v, &g, &h).ok();
            }
        }
    }
    record.overall_speed = overall_speed(&record);
    Ok(record)
}

/// Speed of the midpoint between SpineG and SpineH, or `None` when either
/// spine keypoint is invalid in either frame.
pub fn overall_speed(record: &VelocityRecord) -> Option<f64> {
    let g = record.vector(SPINE_G)?;
    let h = record.vector(SPINE_H)?;
    Some(((g + h) * 0.5).norm())
}

/// Speeds quoted in the annotation prompt (cm/s).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedSummary {
    pub overall: Option<f64>,
    pub head: Option<f64>,
    pub forelimb_left: Option<f64>,
    pub forelimb_right: Option<f64>,
    pub hindlimb_left: Option<f64>,
    pub hindlimb_right: Option<f64>,
}

impl SpeedSummary {
    /// Head speed is the snout speed; limb speeds are paw-tip speeds.
    pub fn from_record(record: &VelocityRecord) -> Self {
        Self {
            overall: record.overall_speed,
            head: record.speed(SNOUT),
            forelimb_left: record.speed(FOREPAW_L),
            forelimb_right: record.speed(FOREPAW_R),
            hindlimb_left: record.speed(HINDPAW_L),
            hindlimb_right: record.speed(HINDPAW_R),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose_with(frame: u64, f: impl Fn(usize) -> Option<[f64; 3]>) -> Pose3D {
        let mut p = Pose3D::empty(frame);
        for j in 0..NUM_KEYPOINTS {
            p.points[j] = f(j);
        }
        p
    }

    #[test]
    fn identical_poses_give_zero_velocity() {
        let a = pose_with(1, |j| Some([j as f64, 1.0, 2.0]));
        let r = velocity(&a, &a, 60.0, VelocityMode::PerSecond).unwrap();
        assert!(r.vectors.iter().all(|v| *v == Some([0.0, 0.0, 0.0])));
        assert_eq!(r.overall_speed, Some(0.0));
    }

    #[test]
    fn per_second_and_literal_modes() {
        let prev = pose_with(0, |j| Some([j as f64, 0.0, 0.0]));
        let now = pose_with(1, |j| Some([j as f64 + 0.6, 0.0, 0.0]));
        let ps = velocity(&now, &prev, 60.0, VelocityMode::PerSecond).unwrap();
        let v = ps.vector(3).unwrap();
        assert!((v.x - 36.0).abs() < 1e-9 && v.y == 0.0 && v.z == 0.0);
        let lit = velocity(&now, &prev, 60.0, VelocityMode::Literal).unwrap();
        assert!((lit.vector(3).unwrap().x - 0.01).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_fps_is_rejected() {
        let a = pose_with(0, |_| Some([0.0; 3]));
        assert!(matches!(velocity(&a, &a, 0.0, VelocityMode::PerSecond), Err(KinematicsError::Parameter(_))));
        assert!(matches!(velocity(&a, &a, -5.0, VelocityMode::Literal), Err(KinematicsError::Parameter(_))));
    }

    #[test]
    fn invalid_keypoints_propagate() {
        let prev = pose_with(0, |j| if j == 2 { None } else { Some([0.0; 3]) });
        let now = pose_with(1, |j| if j == 3 { None } else { Some([1.0, 0.0, 0.0]) });
        let r = velocity(&now, &prev, 5.0, VelocityMode::PerSecond).unwrap();
        assert!(r.vectors[2].is_none() && r.vectors[3].is_none());
        assert!(r.vectors[4].is_some());
    }

    #[test]
    fn sign_table() {
        let g = Vector3::new(1.0, 0.0, 0.0);
        let h = Vector3::zeros();
        assert_eq!(signed_speed(&Vector3::new(2.0, 0.0, 0.0), &g, &h).unwrap(), -2.0);
        assert_eq!(signed_speed(&Vector3::new(-3.0, 0.0, 0.0), &g, &h).unwrap(), 3.0);
        assert_eq!(signed_speed(&Vector3::new(0.0, 1.0, 0.0), &g, &h).unwrap(), 0.0);
        assert_eq!(signed_speed(&Vector3::zeros(), &g, &h).unwrap(), 0.0);
        assert_eq!(signed_speed(&Vector3::x(), &g, &g), Err(KinematicsError::DegenerateAxis));
    }

    #[test]
    fn overall_speed_uses_spine_midpoint() {
        // stationary spine, moving forelimbs
        let prev = pose_with(0, |_| Some([0.0; 3]));
        let now = pose_with(1, |j| if j == FOREPAW_L || j == FOREPAW_R { Some([0.0, 0.0, 1.0]) } else { Some([0.0; 3]) });
        let r = velocity(&now, &prev, 60.0, VelocityMode::PerSecond).unwrap();
        assert_eq!(r.overall_speed, Some(0.0));

        // midpoint displaced 0.5 cm at 60 fps
        let prev = pose_with(0, |j| match j {
            SPINE_G => Some([1.0, 0.0, 0.0]),
            SPINE_H => Some([0.0, 0.0, 0.0]),
            _ => Some([0.0; 3]),
        });
        let now = pose_with(1, |j| match j {
            SPINE_G => Some([1.0, 0.5, 0.0]),
            SPINE_H => Some([0.0, 0.5, 0.0]),
            _ => Some([0.0; 3]),
        });
        let r = velocity(&now, &prev, 60.0, VelocityMode::PerSecond).unwrap();
        assert!((r.overall_speed.unwrap() - 30.0).abs() < 1e-9);

        let broken = pose_with(1, |j| if j == SPINE_H { None } else { Some([0.0; 3]) });
        let r = velocity(&broken, &prev, 60.0, VelocityMode::PerSecond).unwrap();
        assert_eq!(r.overall_speed, None);
    }

    #[test]
    fn speed_summary_reads_snout_and_paws() {
        let prev = pose_with(0, |_| Some([0.0; 3]));
        let now = pose_with(1, |j| Some([j as f64 * 0.01, 0.0, 0.0]));
        let r = velocity(&now, &prev, 5.0, VelocityMode::PerSecond).unwrap();
        let s = SpeedSummary::from_record(&r);
        assert!((s.head.unwrap() - SNOUT as f64 * 0.05).abs() < 1e-12);
        assert!((s.hindlimb_right.unwrap() - HINDPAW_R as f64 * 0.05).abs() < 1e-12);
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn signed_speed_is_odd_and_keeps_magnitude(v in vec3(), g in vec3(), h in vec3()) {
            prop_assume!((g - h).norm() > 1e-6);
            prop_assume!(v.dot(&(g - h)) != 0.0);
            let s = signed_speed(&v, &g, &h).unwrap();
            let s_neg = signed_speed(&-v, &g, &h).unwrap();
            prop_assert_eq!(s, -s_neg);
            prop_assert!((s.abs() - v.norm()).abs() <= 1e-12 * v.norm().max(1.0));
        }

        #[test]
        fn velocity_is_linear_in_displacement(d in vec3(), a in -10.0..10.0f64, fps in 1.0..240.0f64, literal in any::<bool>()) {
            let mode = if literal { VelocityMode::Literal } else { VelocityMode::PerSecond };
            let prev = pose_with(0, |_| Some([0.0; 3]));
            let one = pose_with(1, |_| Some([d.x, d.y, d.z]));
            let scaled = pose_with(1, |_| Some([a * d.x, a * d.y, a * d.z]));
            let v1 = velocity(&one, &prev, fps, mode).unwrap().vector(0).unwrap();
            let va = velocity(&scaled, &prev, fps, mode).unwrap().vector(0).unwrap();
            prop_assert!((va - v1 * a).norm() <= 1e-9 * (1.0 + va.norm()));
        }
    }
}
