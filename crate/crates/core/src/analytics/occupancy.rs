use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::kinematics::schema::{SPINE_G, SPINE_H};
use crate::kinematics::Pose3D;

/// Radius of the 25 cm recording chamber.
pub const ARENA_RADIUS_CM: f64 = 12.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    pub frame_id: u64,
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
    pub outside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub radius_cm: f64,
    pub points: Vec<OccupancyPoint>,
    /// Frames without both spine keypoints.
    pub skipped: Vec<u64>,
}

/// Spine midpoint of each pose on the world x–y plane, tagged with the
/// frame's label. The arena is centred on the world origin.
pub fn spatial_occupancy(
    poses: &[Pose3D],
    labels: &BTreeMap<u64, String>,
    radius_cm: f64,
) -> Result<Occupancy, AnalyticsError> {
    if !(radius_cm > 0.0 && radius_cm.is_finite()) {
        return Err(AnalyticsError::Parameter(format!("arena radius {radius_cm} must be positive")));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for pose in poses {
        match (pose.point(SPINE_G), pose.point(SPINE_H)) {
            (Some(g), Some(h)) => {
                let m = (g + h) / 2.0;
                points.push(OccupancyPoint {
                    frame_id: pose.frame_index,
                    x: m.x,
                    y: m.y,
                    label: labels.get(&pose.frame_index).cloned(),
                    outside: m.x.hypot(m.y) > radius_cm,
                });
            }
            _ => skipped.push(pose.frame_index),
        }
    }
    Ok(Occupancy { radius_cm, points, skipped })
}
