use image::{ImageFormat, Rgb, RgbImage};
use nalgebra::Vector3;

use ethokit::kinematics::schema::*;
use ethokit::kinematics::{CameraModel, Pose3D};

/// Output width of rendered views; height follows the camera's aspect ratio.
const WIDTH: u32 = 480;

const BONES: [(usize, usize); 23] = [
    (SNOUT, EAR_L),
    (SNOUT, EAR_R),
    (SNOUT, SPINE_F),
    (SPINE_F, SPINE_G),
    (SPINE_G, SPINE_H),
    (SPINE_H, HIP),
    (HIP, TAIL_BASE),
    (TAIL_BASE, TAIL_MID),
    (TAIL_MID, TAIL_END),
    (SPINE_F, SHOULDER_L),
    (SHOULDER_L, ELBOW_L),
    (ELBOW_L, WRIST_L),
    (WRIST_L, FOREPAW_L),
    (SPINE_F, SHOULDER_R),
    (SHOULDER_R, ELBOW_R),
    (ELBOW_R, WRIST_R),
    (WRIST_R, FOREPAW_R),
    (HIP, KNEE_L),
    (KNEE_L, ANKLE_L),
    (ANKLE_L, HINDPAW_L),
    (HIP, KNEE_R),
    (KNEE_R, ANKLE_R),
    (ANKLE_R, HINDPAW_R),
];

/// A stand-in view: the pose projected through `camera` as dots on black.
pub fn render_pose(camera: &CameraModel, pose: Option<&Pose3D>) -> Vec<u8> {
    let (w, h) = camera.image_size.unwrap_or(((2.0 * camera.cx) as u32, (2.0 * camera.cy) as u32));
    let scale = WIDTH as f64 / w.max(1) as f64;
    let height = ((h as f64 * scale).round() as u32).max(1);
    let mut img = RgbImage::new(WIDTH, height);
    if let Some(pose) = pose {
        let pts: Vec<Option<(f64, f64)>> = pose
            .points
            .iter()
            .map(|p| {
                let p = (*p)?;
                let uv = camera.project(&Vector3::new(p[0], p[1], p[2])).ok()?;
                Some((uv.x * scale, uv.y * scale))
            })
            .collect();
        for (a, b) in BONES {
            if let (Some(Some(p)), Some(Some(q))) = (pts.get(a), pts.get(b)) {
                line(&mut img, *p, *q, Rgb([90, 90, 90]));
            }
        }
        for (i, p) in pts.iter().enumerate() {
            if let Some((x, y)) = p {
                dot(&mut img, *x, *y, color(i));
            }
        }
    }
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png into memory");
    out.into_inner()
}

fn color(i: usize) -> Rgb<u8> {
    const PALETTE: [[u8; 3]; 6] =
        [[230, 80, 80], [80, 200, 90], [90, 130, 240], [240, 200, 60], [200, 90, 220], [70, 210, 220]];
    Rgb(PALETTE[i % PALETTE.len()])
}

fn dot(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -2..=2 {
        for dx in -2..=2 {
            let (px, py) = (cx + dx, cy + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).clamp(1, 4096);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}
