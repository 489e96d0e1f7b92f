//! Camera models, multi-view triangulation of the 24-keypoint skeleton,
//! velocities and bounding boxes.

pub mod bbox;
pub mod camera;
pub mod schema;
pub mod triangulate;
pub mod velocity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bbox::{bbox_from_keypoints, BoundingBox, DEFAULT_BOX_PADDING};
pub use camera::{look_at_rotation, CameraModel, CameraRig, Distortion};
pub use schema::{KEYPOINT_LABELS, NUM_KEYPOINTS};
pub use triangulate::{triangulate, triangulate_pose, LmSettings, Observation2D, Pose3D, TriangulatedPoint, TriangulationOptions, Weighting};
pub use velocity::{overall_speed, signed_speed, velocity, SpeedSummary, VelocityMode, VelocityRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: String, reason: String },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("unknown camera id {0:?}")]
    UnknownCamera(String),
    #[error("undistortion did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: [f64; 2] },
    #[error("point is behind camera {id} (camera-frame depth {depth})")]
    BehindCamera { id: String, depth: f64 },
    #[error("insufficient views: need at least 2 usable observations, got {0}")]
    InsufficientViews(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate body axis: SpineG and SpineH coincide")]
    DegenerateAxis,
    #[error("no valid keypoints for bounding box")]
    EmptyBox,
}

/// One line of the keypoint input: all 24 keypoints of one view at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewKeypoints {
    pub frame_index: u64,
    pub camera_id: String,
    /// `(u, v, confidence)` per keypoint in schema order.
    pub keypoints: Vec<[f64; 3]>,
}

impl ViewKeypoints {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.keypoints.len() != NUM_KEYPOINTS {
            return Err(KinematicsError::Parameter(format!(
                "frame {} camera {}: expected {NUM_KEYPOINTS} keypoints, got {}",
                self.frame_index,
                self.camera_id,
                self.keypoints.len()
            )));
        }
        if let Some(k) = self.keypoints.iter().find(|k| !(0.0..=1.0).contains(&k[2])) {
            return Err(KinematicsError::Parameter(format!(
                "frame {} camera {}: confidence {} outside [0, 1]",
                self.frame_index, self.camera_id, k[2]
            )));
        }
        Ok(())
    }
}

/// Regroups per-view records of one frame into per-keypoint observation lists.
pub fn observations_by_keypoint(views: &[ViewKeypoints]) -> Vec<Vec<Observation2D>> {
    let mut per_kp = vec![Vec::with_capacity(views.len()); NUM_KEYPOINTS];
    for view in views {
        for (j, k) in view.keypoints.iter().take(NUM_KEYPOINTS).enumerate() {
            per_kp[j].push(Observation2D::new(view.camera_id.clone(), k[0], k[1], k[2]));
        }
    }
    per_kp
}

/// Groups view records by frame index.
pub fn group_by_frame(records: impl IntoIterator<Item = ViewKeypoints>) -> BTreeMap<u64, Vec<ViewKeypoints>> {
    let mut frames: BTreeMap<u64, Vec<ViewKeypoints>> = BTreeMap::new();
    for r in records {
        frames.entry(r.frame_index).or_default().push(r);
    }
    frames
}
