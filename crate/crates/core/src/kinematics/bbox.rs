use serde::{Deserialize, Serialize};

use super::KinematicsError;

/// Default padding added on every side of a keypoint box, in pixels.
pub const DEFAULT_BOX_PADDING: f64 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Axis-aligned box around the valid keypoints `(u, v, confidence)` of one
/// view, padded by `pad` on every side and clamped to `[0, w] × [0, h]`
/// when the image size is known. Keypoints with zero confidence or
/// non-finite coordinates are ignored.
pub fn bbox_from_keypoints(
    keypoints: &[[f64; 3]],
    pad: f64,
    image_size: Option<(u32, u32)>,
) -> Result<BoundingBox, KinematicsError> {
    let mut valid = keypoints
        .iter()
        .filter(|k| k[2] > 0.0 && k[0].is_finite() && k[1].is_finite())
        .peekable();
    if valid.peek().is_none() {
        return Err(KinematicsError::EmptyBox);
    }
    let mut b = BoundingBox {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for k in valid {
        b.x_min = b.x_min.min(k[0]);
        b.y_min = b.y_min.min(k[1]);
        b.x_max = b.x_max.max(k[0]);
        b.y_max = b.y_max.max(k[1]);
    }
    b.x_min -= pad;
    b.y_min -= pad;
    b.x_max += pad;
    b.y_max += pad;
    if let Some((w, h)) = image_size {
        let (w, h) = (f64::from(w), f64::from(h));
        b.x_min = b.x_min.clamp(0.0, w);
        b.x_max = b.x_max.clamp(0.0, w);
        b.y_min = b.y_min.clamp(0.0, h);
        b.y_max = b.y_max.clamp(0.0, h);
    }
    Ok(b)
}
