mod common;

use ethokit::kinematics::schema::{SPINE_G, SPINE_H};
use ethokit::kinematics::{signed_speed, triangulate_pose, velocity, Pose3D, TriangulationOptions, VelocityMode, NUM_KEYPOINTS};
use ethokit::synthetic::ring_rig;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pose(frame: u64, pts: &[Vector3<f64>]) -> Pose3D {
    let mut p = Pose3D::empty(frame);
    for (slot, v) in p.points.iter_mut().zip(pts) {
        *slot = Some([v.x, v.y, v.z]);
    }
    p
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn body() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    proptest::collection::vec(vec3(), NUM_KEYPOINTS).prop_filter("spine axis", |p| (p[SPINE_G] - p[SPINE_H]).norm() > 1e-3)
}

#[test]
fn sign_table() {
    let g = Vector3::new(1.0, 2.0, 3.0);
    let h = Vector3::new(0.0, 2.0, 3.0);
    let v = |x, y, z| Vector3::new(x, y, z);
    assert_eq!(signed_speed(&v(2.0, 0.0, 0.0), &g, &h).unwrap(), -2.0);
    assert_eq!(signed_speed(&v(-3.0, 0.0, 0.0), &g, &h).unwrap(), 3.0);
    assert_eq!(signed_speed(&v(0.0, 4.0, 0.0), &g, &h).unwrap(), 0.0);
    assert_eq!(signed_speed(&v(0.0, 0.0, -4.0), &g, &h).unwrap(), 0.0);
    assert_eq!(signed_speed(&v(0.0, 0.0, 0.0), &g, &h).unwrap(), 0.0);
    assert!(signed_speed(&v(1.0, 0.0, 0.0), &g, &g).is_err());
}

#[test]
fn noiseless_triangulation_recovers_the_skeleton() {
    let rig = ring_rig();
    assert_eq!(rig.len(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = TriangulationOptions::default();
    for frame in 0..20 {
        let truth = common::skeleton(&mut rng);
        let obs = common::observe(&rig, &truth, 0.0, &mut rng);
        let p = triangulate_pose(frame, &obs, &rig, &opts);
        for (j, t) in truth.iter().enumerate() {
            let got = p.point(j).expect("valid keypoint");
            assert!((got - t).norm() < 1e-6, "frame {frame} keypoint {j}: {}", (got - t).norm());
        }
        assert_eq!(p.views_used, vec![8; NUM_KEYPOINTS]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parallel_is_negative_antiparallel_positive(d in vec3(), s in 0.01..100.0f64) {
        prop_assume!(d.norm() > 1e-3);
        let h = Vector3::new(1.0, -2.0, 0.5);
        let g = h + d;
        let along = d.normalize() * s;
        let got = signed_speed(&along, &g, &h).unwrap();
        prop_assert!(got < 0.0);
        prop_assert!((got + s).abs() <= 1e-9 * s.max(1.0));
        let back = signed_speed(&(-along), &g, &h).unwrap();
        prop_assert!(back > 0.0);
        prop_assert!((back - s).abs() <= 1e-9 * s.max(1.0));
    }

    #[test]
    fn magnitude_is_speed(v in vec3(), g in vec3(), h in vec3()) {
        prop_assume!((g - h).norm() > 1e-3);
        let s = signed_speed(&v, &g, &h).unwrap();
        prop_assert!(s.abs() == v.norm() || s == 0.0);
    }

    #[test]
    fn velocity_is_linear_in_displacement(start in body(), delta in body(), a in -5.0..5.0f64, fps in 1.0..240.0f64) {
        let prev = pose(0, &start);
        let unit: Vec<_> = start.iter().zip(&delta).map(|(p, d)| p + d).collect();
        let scaled: Vec<_> = start.iter().zip(&delta).map(|(p, d)| p + d * a).collect();
        let v1 = velocity(&pose(1, &unit), &prev, fps, VelocityMode::PerSecond).unwrap();
        let va = velocity(&pose(1, &scaled), &prev, fps, VelocityMode::PerSecond).unwrap();
        for j in 0..NUM_KEYPOINTS {
            let expect = delta[j] * fps * a;
            prop_assert!((va.vector(j).unwrap() - expect).norm() <= 1e-6 * (1.0 + expect.norm()));
            prop_assert!((va.vector(j).unwrap() - v1.vector(j).unwrap() * a).norm() <= 1e-6 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn rigid_motion_equivariance(
        a in body(),
        b in body(),
        axis in vec3(),
        angle in -3.1..3.1f64,
        t in vec3(),
        fps in 1.0..240.0f64,
    ) {
        prop_assume!(axis.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let move_all = |pts: &[Vector3<f64>]| -> Vec<Vector3<f64>> { pts.iter().map(|p| r * p + t).collect() };
        let base = velocity(&pose(1, &b), &pose(0, &a), fps, VelocityMode::PerSecond).unwrap();
        let moved = velocity(&pose(1, &move_all(&b)), &pose(0, &move_all(&a)), fps, VelocityMode::PerSecond).unwrap();
        for j in 0..NUM_KEYPOINTS {
            let expect = r * base.vector(j).unwrap();
            let got = moved.vector(j).unwrap();
            prop_assert!((got - expect).norm() <= 1e-6 * (1.0 + expect.norm()));
            let (s0, s1) = (base.signed_speed[j].unwrap(), moved.signed_speed[j].unwrap());
            // A rotated dot product may land either side of zero when it started at zero.
            prop_assert!((s0.abs() - s1.abs()).abs() <= 1e-6 * (1.0 + s0.abs()) || s0 == 0.0 || s1 == 0.0);
            if s0 != 0.0 && s1 != 0.0 {
                prop_assert_eq!(s0.signum(), s1.signum());
            }
        }
        let (o0, o1) = (base.overall_speed.unwrap(), moved.overall_speed.unwrap());
        prop_assert!((o0 - o1).abs() <= 1e-6 * (1.0 + o0));
    }

    #[test]
    fn noiseless_poses_reproject_exactly(seed in 0u64..1000) {
        let rig = ring_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = common::skeleton(&mut rng);
        let obs = common::observe(&rig, &truth, 0.0, &mut rng);
        let p = triangulate_pose(0, &obs, &rig, &TriangulationOptions::default());
        prop_assert!(p.residual_rms < 1e-6);
        prop_assert_eq!(p.valid_count(), NUM_KEYPOINTS);
    }
}
