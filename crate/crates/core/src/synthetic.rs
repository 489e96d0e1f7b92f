//! Synthetic recordings: a calibrated camera ring, a scripted skeleton that
//! cycles through behaviors, and a matching reference cohort.
//!
//! Bouts change halfway between sampled frames, so every sampled frame and
//! its predecessor belong to the same bout. Periodic movements are circles,
//! which keeps the per-frame speeds of a bout constant.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analytics::phenotype::major_feature;
use crate::analytics::PhenotypeProfile;
use crate::kinematics::camera::{look_at_rotation, CameraModel, CameraRig, Distortion};
use crate::kinematics::schema::*;
use crate::kinematics::ViewKeypoints;
use crate::provider::offline::Category;

pub const RIG_RADIUS_CM: f64 = 75.0;
pub const TOP_HEIGHT_CM: f64 = 120.0;
/// Radius of the circular path walked by the body centre.
pub const PATH_RADIUS_CM: f64 = 8.0;

/// Behaviors scheduled in bouts. Jumps are planted separately.
pub const SCHEDULED: [Category; 8] = [
    Category::Running,
    Category::Walking,
    Category::Rearing,
    Category::Scratching,
    Category::Grooming,
    Category::Sniffing,
    Category::Sitting,
    Category::Resting,
];

/// Seven lateral cameras on a ring plus one overhead camera, all aimed at
/// the arena centre.
pub fn ring_rig() -> CameraRig {
    let target = Vector3::new(0.0, 0.0, 3.0);
    let mut cams = Vec::new();
    for i in 0..7 {
        let a = i as f64 * TAU / 7.0;
        let pos = Vector3::new(RIG_RADIUS_CM * a.cos(), RIG_RADIUS_CM * a.sin(), 8.0);
        let r = look_at_rotation(&pos, &target, &Vector3::z());
        let d = Distortion { k1: -0.04 + 0.005 * i as f64, k2: 0.008, k3: 0.0, p1: 0.0004, p2: -0.0002 };
        let cam = CameraModel::new(format!("cam{i}"), 2400.0, (1920.0, 1080.0), d, r, -(r * pos))
            .expect("valid lateral camera")
            .with_image_size(Some((3840, 2160)));
        cams.push(cam);
    }
    let top = Vector3::new(0.0, 0.0, TOP_HEIGHT_CM);
    let r = look_at_rotation(&top, &Vector3::zeros(), &Vector3::y());
    let cam = CameraModel::new("cam7", 2400.0, (1920.0, 1080.0), Distortion::default(), r, -(r * top))
        .expect("valid top camera")
        .with_image_size(Some((3840, 2160)));
    cams.push(cam);
    CameraRig::new(cams).expect("unique ids")
}

/// Standing posture in the body frame: x forward, y left, z up, origin
/// below the SpineG/SpineH midpoint.
const REST: [[f64; 3]; NUM_KEYPOINTS] = [
    [2.8, 0.7, 3.0],   // EarL
    [2.8, -0.7, 3.0],  // EarR
    [4.5, 0.0, 2.2],   // Snout
    [1.8, 0.0, 3.0],   // SpineF
    [0.6, 0.0, 3.2],   // SpineG
    [-0.6, 0.0, 3.2],  // SpineH
    [-2.0, 0.0, 2.8],  // Hip
    [-3.2, 0.0, 2.0],  // Tail (base)
    [-6.0, 0.0, 0.8],  // Tail (mid)
    [-9.0, 0.0, 0.3],  // Tail (end)
    [2.2, 0.9, 0.2],   // ForepawL
    [2.0, 0.9, 0.7],   // WristL
    [1.6, 1.0, 1.4],   // ElbowL
    [1.5, 0.9, 2.3],   // ShoulderL
    [2.2, -0.9, 0.2],  // ForepawR
    [2.0, -0.9, 0.7],  // WristR
    [1.6, -1.0, 1.4],  // ElbowR
    [1.5, -0.9, 2.3],  // ShoulderR
    [-2.2, 1.1, 0.2],  // HindpawL
    [-2.4, 1.1, 0.8],  // AnkleL
    [-1.6, 1.2, 1.6],  // KneeL
    [-2.2, -1.1, 0.2], // HindpawR
    [-2.4, -1.1, 0.8], // AnkleR
    [-1.6, -1.2, 1.6], // KneeR
];

const FRONT: [usize; 12] = [
    EAR_L, EAR_R, SNOUT, SPINE_F, FOREPAW_L, WRIST_L, ELBOW_L, SHOULDER_L, FOREPAW_R, WRIST_R, ELBOW_R, SHOULDER_R,
];

/// Locomotion speed of the body centre in cm/s.
fn travel_speed(c: Category) -> f64 {
    match c {
        Category::Running => 22.0,
        Category::Walking => 8.0,
        Category::Sitting => 1.8,
        _ => 0.0,
    }
}

/// Body-frame keypoints of behavior `c` at time `t`.
fn posture(c: Category, t: f64) -> [[f64; 3]; NUM_KEYPOINTS] {
    let mut p = REST;
    let circle = |r: f64, hz: f64, phase: f64| {
        let a = TAU * hz * t + phase;
        (r * a.cos(), r * a.sin())
    };
    match c {
        Category::Resting => {
            for k in p.iter_mut() {
                k[2] *= 0.6;
            }
        }
        Category::Rearing => {
            for &j in &FRONT {
                let [x, y, z] = REST[j];
                p[j] = [0.6 + (x - 0.6) * 0.3, y, z + 2.5 + (x - 0.6) * 0.9];
            }
            for (j, phase) in [(FOREPAW_L, 0.0), (FOREPAW_R, PI)] {
                let (a, b) = circle(0.5, 3.0, phase);
                p[j] = [1.6 + a, REST[j][1], 6.0 + b];
            }
        }
        Category::Grooming => {
            p[SNOUT] = [4.0, 0.0, 1.8];
            for (j, w, phase) in [(FOREPAW_L, WRIST_L, 0.0), (FOREPAW_R, WRIST_R, PI)] {
                let side = REST[j][1].signum();
                let (a, b) = circle(0.4, 2.0, phase);
                p[j] = [3.4 + a, 0.5 * side, 2.2 + b];
                p[w] = [3.0, 0.6 * side, 1.8];
            }
        }
        Category::Scratching => {
            let (a, b) = circle(0.5, 4.0, 0.0);
            p[HINDPAW_R] = [1.6, -1.4 + a, 2.2 + b];
            p[ANKLE_R] = [0.6, -1.4, 1.8];
            p[KNEE_R] = [-0.6, -1.4, 1.6];
        }
        Category::Sniffing => {
            let (a, b) = circle(0.3, 3.0, 0.0);
            p[SNOUT] = [4.6 + a, b, 1.6];
        }
        _ => {}
    }
    p
}

/// A run of consecutive sampled frames sharing one behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bout {
    pub start_sample: usize,
    pub end_sample: usize,
    pub behavior: Category,
}

/// Bouts of 20–100 samples filling `n_samples` with each scheduled
/// behavior taking `round(share · n)` samples. The first bout is resting.
pub fn schedule(rng: &mut ChaCha8Rng, shares: &[f64; 8], n_samples: usize) -> Vec<Bout> {
    let total: f64 = shares.iter().sum();
    let mut quota: Vec<usize> = shares.iter().map(|s| (s / total * n_samples as f64).round() as usize).collect();
    // absorb rounding into resting
    let sum: usize = quota.iter().sum();
    let rest = quota.len() - 1;
    quota[rest] = (quota[rest] + n_samples).saturating_sub(sum);
    let mut pieces: Vec<(Category, usize)> = Vec::new();
    for (c, mut left) in SCHEDULED.iter().zip(quota) {
        while left > 0 {
            let len = if left <= 120 { left } else { rng.gen_range(20..=100) };
            pieces.push((*c, len));
            left -= len;
        }
    }
    pieces.shuffle(rng);
    if let Some(i) = pieces.iter().position(|p| p.0 == Category::Resting) {
        let first = pieces.remove(i);
        pieces.insert(0, first);
    }
    let mut bouts = Vec::new();
    let mut at = 0;
    for (behavior, len) in pieces {
        bouts.push(Bout { start_sample: at, end_sample: at + len, behavior });
        at += len;
    }
    bouts
}

/// Behavior shares of one experimental group, in [`SCHEDULED`] order.
pub fn group_shares() -> Vec<(&'static str, [f64; 8])> {
    vec![
        ("vehicle", [0.05, 0.20, 0.12, 0.06, 0.14, 0.15, 0.13, 0.15]),
        ("stimulant-low", [0.12, 0.30, 0.14, 0.04, 0.08, 0.14, 0.10, 0.08]),
        ("stimulant-high", [0.25, 0.33, 0.10, 0.03, 0.04, 0.15, 0.06, 0.04]),
        ("sedative-low", [0.03, 0.12, 0.06, 0.06, 0.12, 0.11, 0.20, 0.30]),
        ("sedative-high", [0.02, 0.06, 0.03, 0.05, 0.08, 0.08, 0.20, 0.48]),
        ("anxiolytic", [0.05, 0.18, 0.20, 0.10, 0.06, 0.22, 0.12, 0.07]),
    ]
}

/// Group shares with a ±10% relative jitter per behavior, renormalized.
fn subject_shares(rng: &mut ChaCha8Rng, base: &[f64; 8]) -> [f64; 8] {
    let mut s = *base;
    for v in s.iter_mut() {
        *v *= 1.0 + rng.gen_range(-0.1..0.1);
    }
    let total: f64 = s.iter().sum();
    s.map(|v| v / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub session_id: String,
    pub subject: String,
    pub group: String,
    pub fps: f64,
    pub duration_s: f64,
    pub target_rate: f64,
    /// Standard deviation of the pixel noise added to every projection.
    pub noise_px: f64,
    pub subjects_per_group: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            session_id: "synthetic-01".into(),
            subject: "m01".into(),
            group: "vehicle".into(),
            fps: 60.0,
            duration_s: 1200.0,
            target_rate: 5.0,
            noise_px: 0.05,
            subjects_per_group: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub samples: usize,
    pub frames_written: usize,
    pub bouts: Vec<Bout>,
    /// Sampled frame carrying the planted jump.
    pub jump_frame: u64,
    pub truth: BTreeMap<String, usize>,
}

/// Body state at one raw frame.
#[derive(Debug, Clone, Copy)]
struct Body {
    phi: f64,
    yaw: f64,
}

fn world_points(body: &Body, c: Category, t: f64, lift: f64) -> [Vector3<f64>; NUM_KEYPOINTS] {
    let centre = Vector3::new(PATH_RADIUS_CM * body.phi.cos(), PATH_RADIUS_CM * body.phi.sin(), lift);
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), body.yaw);
    let local = posture(c, t);
    std::array::from_fn(|j| centre + rot * Vector3::from(local[j]))
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Writes a complete session directory: `session.toml`, `calibration.json`,
/// `keypoints.jsonl` (sampled frames and their predecessors only),
/// `truth.csv` and `references.json`.
pub fn generate_session(dir: &Path, cfg: &SynthConfig) -> std::io::Result<SynthSummary> {
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, m);
    let stride = (cfg.fps / cfg.target_rate).round() as u64;
    if stride < 2 || cfg.duration_s <= 0.0 {
        return Err(invalid("synthetic sessions need a frame stride of at least 2".into()));
    }
    let shares = group_shares();
    let base = shares
        .iter()
        .find(|(g, _)| *g == cfg.group)
        .map(|(_, s)| *s)
        .ok_or_else(|| invalid(format!("unknown group {:?}", cfg.group)))?;
    std::fs::create_dir_all(dir)?;
    let n_samples = (cfg.duration_s * cfg.fps / stride as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let own = subject_shares(&mut rng, &base);
    let bouts = schedule(&mut rng, &own, n_samples);
    let mut per_sample = vec![Category::Resting; n_samples];
    for b in &bouts {
        per_sample[b.start_sample..b.end_sample].fill(b.behavior);
    }
    // plant the jump in the middle of the first resting bout of the second half
    let jump_sample = bouts
        .iter()
        .find(|b| b.behavior == Category::Resting && b.start_sample >= n_samples / 2 && b.end_sample - b.start_sample >= 3)
        .or_else(|| bouts.iter().find(|b| b.behavior == Category::Resting && b.start_sample > 0))
        .map(|b| (b.start_sample + b.end_sample) / 2)
        .unwrap_or(n_samples / 2);
    let jump_frame = jump_sample as u64 * stride;

    let rig = ring_rig();
    std::fs::write(dir.join("calibration.json"), rig.to_json())?;

    let noise = Normal::new(0.0, cfg.noise_px.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6b70);
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("keypoints.jsonl"))?);
    let last_frame = n_samples as u64 * stride;
    let half = stride / 2;
    let mut body = Body { phi: 0.0, yaw: PI / 2.0 };
    let mut frames_written = 0;
    for f in 0..last_frame {
        let sample = ((f + half) / stride) as usize;
        let c = per_sample[sample.min(n_samples - 1)];
        if f > 0 {
            let v = travel_speed(c);
            body.phi += v / (PATH_RADIUS_CM * cfg.fps);
            if matches!(c, Category::Walking | Category::Running) {
                body.yaw = body.phi + PI / 2.0;
            }
        }
        if f % stride != 0 && (f + 1) % stride != 0 {
            continue;
        }
        // 0.7 cm per frame for three frames up, then back down
        let k = f as f64 - (jump_frame as f64 - 1.0);
        let lift = if (0.0..=6.0).contains(&k) { 0.7 * k.min(6.0 - k).min(3.0) } else { 0.0 };
        let points = world_points(&body, c, f as f64 / cfg.fps, lift);
        for cam in &rig.cameras {
            let keypoints = points
                .iter()
                .map(|x| {
                    let uv = cam.project(x).expect("keypoints in front of every camera");
                    [
                        round4(uv.x + noise.sample(&mut noise_rng)),
                        round4(uv.y + noise.sample(&mut noise_rng)),
                        1.0,
                    ]
                })
                .collect();
            let rec = ViewKeypoints { frame_index: f, camera_id: cam.id.clone(), keypoints };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        frames_written += 1;
    }
    out.flush()?;

    let mut truth = String::from("frame_index,time_s,behavior\n");
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (s, c) in per_sample.iter().enumerate() {
        let label = if s == jump_sample { Category::Jumping } else { *c }.keyword();
        let f = s as u64 * stride;
        truth.push_str(&format!("{f},{},{label}\n", f as f64 / cfg.fps));
        *counts.entry(label.to_string()).or_default() += 1;
    }
    std::fs::write(dir.join("truth.csv"), truth)?;

    let refs = reference_profiles(cfg.seed, cfg.subjects_per_group, n_samples);
    let refs_json = serde_json::to_string_pretty(&refs).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("references.json"), refs_json + "\n")?;

    let session = format!(
        "id = {:?}\nsubject = {:?}\ngroup = {:?}\nfps = {:?}\nduration_s = {:?}\ntarget_rate = {:?}\n\
         description_views = [\"cam0\", \"cam2\"]\ncalibration = \"calibration.json\"\n\
         keypoints = \"keypoints.jsonl\"\nreferences = \"references.json\"\n",
        cfg.session_id, cfg.subject, cfg.group, cfg.fps, cfg.duration_s, cfg.target_rate
    );
    std::fs::write(dir.join("session.toml"), session)?;

    Ok(SynthSummary { samples: n_samples, frames_written, bouts, jump_frame, truth: counts })
}

/// Major-behavior profiles of `per_group` subjects in each group, from
/// jittered group shares and the same bout scheduler as the session.
pub fn reference_profiles(seed: u64, per_group: usize, n_samples: usize) -> Vec<PhenotypeProfile> {
    let mut out = Vec::new();
    for (gi, (group, base)) in group_shares().iter().enumerate() {
        for s in 0..per_group {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + (gi * 100 + s) as u64));
            let shares = subject_shares(&mut rng, base);
            let bouts = schedule(&mut rng, &shares, n_samples);
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for b in &bouts {
                *counts.entry(b.behavior.keyword().to_string()).or_default() += b.end_sample - b.start_sample;
            }
            out.push(PhenotypeProfile {
                subject: format!("{group}-{}", s + 1),
                group: Some(group.to_string()),
                features: counts
                    .into_iter()
                    .map(|(l, c)| (major_feature(&l), c as f64 / n_samples as f64))
                    .collect(),
            });
        }
    }
    out
}
