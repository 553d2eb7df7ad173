use deca_core::synth::camera::{rigid_inverse, transform_point};
use deca_core::synth::{canonical_pose, project, CameraModel, GenConfig, Intrinsics, KinematicsConfig, RigConfig, ViewTag, ITOP_JOINTS};
use deca_core::{Error, SeededRng};
use proptest::prelude::*;
use rand::SeedableRng;

fn identity() -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn bare_camera(fx: f64, cx: f64) -> CameraModel {
    let k = Intrinsics {
        fx,
        fy: fx,
        cx,
        cy: cx,
        width: 64,
        height: 64,
    };
    CameraModel::new(k, identity(), ViewTag::Free).unwrap()
}

#[test]
fn pinhole_examples() {
    let cam = bare_camera(100.0, 0.0);
    assert_eq!(cam.project_camera_point([1.0, 0.0, 2.0]).unwrap()[0], 50.0);
    let cam = bare_camera(80.0, 31.5);
    assert_eq!(cam.project_camera_point([0.0, 0.0, 1.0]).unwrap(), [31.5, 31.5]);
    assert!(matches!(
        cam.project_camera_point([0.0, 0.0, -1.0]),
        Err(Error::BehindCamera { .. })
    ));
    assert!(cam.project_camera_point([0.0, 0.0, 0.0]).is_err());
}

#[test]
fn rig_cameras_are_rigid() {
    let rig = RigConfig::default();
    for view in GenConfig::views() {
        let cam = rig.camera(view, 64, 64).unwrap();
        cam.validate().unwrap();
        let back = transform_point(&rigid_inverse(&cam.extrinsics), [0.0, 0.0, 0.0]);
        let eye = if view == ViewTag::Front { rig.front_eye } else { rig.top_eye };
        for c in 0..3 {
            assert!((back[c] - eye[c]).abs() < 1e-12);
        }
    }
    assert!(rig.camera(ViewTag::Free, 64, 64).is_err());
}

#[test]
fn canonical_skeleton() {
    let kin = KinematicsConfig::default();
    let s = canonical_pose(&kin).unwrap();
    assert_eq!(s.len(), 15);
    assert_eq!(kin.joint_names(), ITOP_JOINTS.map(String::from).to_vec());
    let head = s.joints[0];
    assert!((head[2] - 1.62).abs() < 1e-9, "head at {head:?}");
    assert!(s.joints.iter().all(|j| j[2] >= 0.0));
}

#[test]
fn cyclic_skeleton_rejected() {
    let mut kin = KinematicsConfig::default();
    let root = kin.joints.iter().position(|j| j.parent.is_none()).unwrap();
    kin.joints[root].parent = Some(0);
    kin.joints[0].parent = Some(root);
    assert!(kin.topological_order().is_err());
}

#[test]
fn out_of_frame_is_reported() {
    let cam = RigConfig::default().camera(ViewTag::Front, 64, 64).unwrap();
    let kin = KinematicsConfig::default();
    let mut s = canonical_pose(&kin).unwrap();
    for j in s.joints.iter_mut() {
        j[1] = -10.0;
    }
    assert!(project(&s, &cam).is_err());
}

fn small_config(seed: u64) -> GenConfig {
    GenConfig {
        frames: 6,
        seed,
        ..GenConfig::default()
    }
}

#[test]
fn regeneration_is_identical() {
    let a = small_config(4);
    for id in a.frame_ids() {
        assert_eq!(a.generate_frame(id).unwrap(), a.generate_frame(id).unwrap());
    }
    let b = small_config(5);
    assert_ne!(
        a.generate_frame(0).unwrap()[0].skeleton3d_camera,
        b.generate_frame(0).unwrap()[0].skeleton3d_camera
    );
}

#[test]
fn subjects_keep_their_bones() {
    let cfg = small_config(1);
    let kin = &cfg.kinematics;
    let a = cfg.generate_frame(3).unwrap();
    let b = cfg.generate_frame(3 + cfg.subjects as u64).unwrap();
    assert_eq!(a[0].subject_id, b[0].subject_id);
    let bones = |r: &deca_core::synth::SampleRecord| {
        let skel = deca_core::synth::Skeleton3D {
            joints: r.skeleton3d_camera.clone(),
            joint_names: kin.joint_names(),
        };
        kin.bone_lengths(&skel)
    };
    for (x, y) in bones(&a[0]).iter().zip(bones(&b[0])) {
        assert!((x - y).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn paired_views_agree(seed in any::<u64>(), frame in 0u64..1_000_000) {
        let cfg = small_config(seed);
        let [front, top] = cfg.generate_frame(frame).unwrap();
        prop_assert_eq!(front.frame_id, top.frame_id);
        let t = front.camera.relative_to(&top.camera);
        for (a, b) in front.skeleton3d_camera.iter().zip(&top.skeleton3d_camera) {
            let m = transform_point(&t, *a);
            for c in 0..3 {
                prop_assert!((m[c] - b[c]).abs() <= 1e-6);
            }
        }
        for rec in [&front, &top] {
            prop_assert!(rec.projection_error().unwrap() <= 0.5);
            prop_assert!(rec.depth.values.iter().all(|&d| d > 0.0 && d <= cfg.body.far as f32));
            prop_assert!(rec.depth.values.iter().any(|&d| d < cfg.body.far as f32));
        }
    }

    #[test]
    fn back_projection_round_trip(u in 0.0f64..63.0, v in 0.0f64..63.0, z in 0.1f64..10.0) {
        let cam = RigConfig::default().camera(ViewTag::Top, 64, 64).unwrap();
        let p = cam.back_project(u, v, z);
        let q = cam.project_camera_point(p).unwrap();
        prop_assert!((q[0] - u).abs() <= 1e-6 && (q[1] - v).abs() <= 1e-6);
    }

    #[test]
    fn sampled_poses_respect_limits(seed in any::<u64>()) {
        let kin = KinematicsConfig::default();
        let mut rng = SeededRng::seed_from_u64(seed);
        let lengths = kin.sample_lengths(&mut rng);
        let params = kin.sample_params(lengths.clone(), &mut rng);
        let skel = kin.forward_kinematics(&params).unwrap();
        let measured = kin.bone_lengths(&skel);
        for (j, spec) in kin.joints.iter().enumerate() {
            if spec.parent.is_some() {
                prop_assert!((measured[j] - lengths[j]).abs() <= 1e-9);
                prop_assert!(spec.length.contains(lengths[j], 1e-12));
            }
        }
    }
}
