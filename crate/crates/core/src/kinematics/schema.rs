//! The 24-keypoint mouse skeleton.
//!
//! Indices are 0-based here; documentation tables elsewhere number them
//! from 1 (so `SNOUT` is keypoint 3 in those tables).

/// Number of keypoints in the skeleton.
pub const NUM_KEYPOINTS: usize = 24;

/// Keypoint labels in schema order.
pub const KEYPOINT_LABELS: [&str; NUM_KEYPOINTS] = [
    "EarL",
    "EarR",
    "Snout",
    "SpineF",
    "SpineG",
    "SpineH",
    "Hip",
    "Tail (base)",
    "Tail (mid)",
    "Tail (end)",
    "ForepawL",
    "WristL",
    "ElbowL",
    "ShoulderL",
    "ForepawR",
    "WristR",
    "ElbowR",
    "ShoulderR",
    "HindpawL",
    "AnkleL",
    "KneeL",
    "HindpawR",
    "AnkleR",
    "KneeR",
];

/// Human-readable descriptions, parallel to [`KEYPOINT_LABELS`].
pub const KEYPOINT_DESCRIPTIONS: [&str; NUM_KEYPOINTS] = [
    "Tip of the Left Ear",
    "Tip of the Right Ear",
    "Tip of the Snout",
    "Beginning of the Spine",
    "First Tripartite Point of the Spine",
    "Second Tripartite Point of the Spine",
    "Hip Joint",
    "Base of the Tail",
    "Middle Section of the Tail",
    "Tip of the Tail",
    "Tip of the Left Forepaw",
    "Left Wrist Joint",
    "Left Elbow Joint",
    "Left Shoulder Joint",
    "Tip of the Right Forepaw",
    "Right Wrist Joint",
    "Right Elbow Joint",
    "Right Shoulder Joint",
    "Tip of the Left Hindpaw",
    "Left Ankle Joint",
    "Left Knee Joint",
    "Tip of the Right Hindpaw",
    "Right Ankle Joint",
    "Right Knee Joint",
];

pub const EAR_L: usize = 0;
pub const EAR_R: usize = 1;
pub const SNOUT: usize = 2;
pub const SPINE_F: usize = 3;
pub const SPINE_G: usize = 4;
pub const SPINE_H: usize = 5;
pub const HIP: usize = 6;
pub const TAIL_BASE: usize = 7;
pub const TAIL_MID: usize = 8;
pub const TAIL_END: usize = 9;
pub const FOREPAW_L: usize = 10;
pub const WRIST_L: usize = 11;
pub const ELBOW_L: usize = 12;
pub const SHOULDER_L: usize = 13;
pub const FOREPAW_R: usize = 14;
pub const WRIST_R: usize = 15;
pub const ELBOW_R: usize = 16;
pub const SHOULDER_R: usize = 17;
pub const HINDPAW_L: usize = 18;
pub const ANKLE_L: usize = 19;
pub const KNEE_L: usize = 20;
pub const HINDPAW_R: usize = 21;
pub const ANKLE_R: usize = 22;
pub const KNEE_R: usize = 23;

/// Index of a keypoint label, if it belongs to the schema.
pub fn keypoint_index(label: &str) -> Option<usize> {
    KEYPOINT_LABELS.iter().position(|l| *l == label)
}
