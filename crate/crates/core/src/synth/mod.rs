//! Procedural paired-view data: skeleton sampler, pinhole cameras and a depth
//! renderer. File IO lives in the `deca` crate.

pub mod camera;
pub mod geom;
pub mod render;
pub mod skeleton;

use alloc::vec::Vec;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use camera::{look_at, project, CameraModel, Extrinsics, Intrinsics, RigConfig, ViewTag};
pub use render::{render, render_depth, render_primitives, BodyShapeConfig, DepthMap, Primitive, Rendered};
pub use skeleton::{canonical_pose, sample_pose, JointSpec, KinematicsConfig, PoseParams, Range, Skeleton3D, ITOP_JOINTS};

use crate::{Error, Result, SeededRng};

/// One rendered view of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub view: ViewTag,
    pub depth: DepthMap,
    pub rgb: Option<Vec<u8>>,
    pub skeleton3d_camera: Vec<[f64; 3]>,
    /// Pixels.
    pub joints2d: Vec<[f64; 2]>,
    pub camera: CameraModel,
    pub subject_id: u32,
    pub frame_id: u64,
}

impl SampleRecord {
    /// Largest pixel distance between the stored 2D joints and the projection
    /// of the stored camera-frame joints.
    pub fn projection_error(&self) -> Result<f64> {
        if self.joints2d.len() != self.skeleton3d_camera.len() {
            return Err(Error::shape("sample", &[self.skeleton3d_camera.len()], &[self.joints2d.len()]));
        }
        let mut worst: f64 = 0.0;
        for (j, (&p, &uv)) in self.skeleton3d_camera.iter().zip(&self.joints2d).enumerate() {
            let proj = self
                .camera
                .project_camera_point(p)
                .map_err(|_| Error::BehindCamera { joint: j, z: p[2] })?;
            worst = worst.max(libm::hypot(proj[0] - uv[0], proj[1] - uv[1]));
        }
        Ok(worst)
    }

    pub fn check_projection(&self, tol_px: f64) -> Result<()> {
        let e = self.projection_error()?;
        if e > tol_px {
            return Err(Error::arg(
                "sample",
                alloc::format!(
                    "frame {} {}: 2D joints off their projection by {e:.3} px",
                    self.frame_id,
                    self.view.as_str()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub frames: usize,
    pub seed: u64,
    /// Frame ids run from here; disjoint sets need disjoint id ranges.
    pub first_frame_id: u64,
    pub subjects: u32,
    pub image_size: usize,
    pub rgb: bool,
    pub kinematics: KinematicsConfig,
    pub body: BodyShapeConfig,
    pub rig: RigConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            frames: 2000,
            seed: 0,
            first_frame_id: 0,
            subjects: 8,
            image_size: 64,
            rgb: false,
            kinematics: KinematicsConfig::default(),
            body: BodyShapeConfig::default(),
            rig: RigConfig::default(),
        }
    }
}

const SUBJECT_STREAM: u64 = 1 << 62;
const MAX_ATTEMPTS: usize = 64;

fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl GenConfig {
    pub fn views() -> [ViewTag; 2] {
        [ViewTag::Front, ViewTag::Top]
    }

    pub fn frame_ids(&self) -> core::ops::Range<u64> {
        self.first_frame_id..self.first_frame_id + self.frames as u64
    }

    pub fn subject_of(&self, frame_id: u64) -> u32 {
        (frame_id % self.subjects.max(1) as u64) as u32
    }

    /// Bone lengths of a subject, fixed by `(seed, subject)`.
    pub fn subject_lengths(&self, subject: u32) -> Vec<f64> {
        let mut rng = stream_rng(self.seed, SUBJECT_STREAM + subject as u64);
        self.kinematics.sample_lengths(&mut rng)
    }

    /// The same pose rendered from the front and the top camera. Depends only
    /// on `(seed, frame_id)`, so frames can be produced in any order.
    pub fn generate_frame(&self, frame_id: u64) -> Result<[SampleRecord; 2]> {
        let subject = self.subject_of(frame_id);
        let lengths = self.subject_lengths(subject);
        let cams = [
            self.rig.camera(ViewTag::Front, self.image_size, self.image_size)?,
            self.rig.camera(ViewTag::Top, self.image_size, self.image_size)?,
        ];
        let mut rng = stream_rng(self.seed, frame_id);
        let mut last_err = Error::OutOfFrame;
        for _ in 0..MAX_ATTEMPTS {
            let params = self.kinematics.sample_params(lengths.clone(), &mut rng);
            let skel = self.kinematics.forward_kinematics(&params)?;
            match self.render_pair(&skel, &cams, subject, frame_id) {
                Ok(pair) => return Ok(pair),
                Err(e @ (Error::OutOfFrame | Error::BehindCamera { .. })) => last_err = e,
                Err(e) => return Err(e),
            }
        }
        Err(last_err)
    }

    fn render_pair(&self, skel: &Skeleton3D, cams: &[CameraModel; 2], subject: u32, frame_id: u64) -> Result<[SampleRecord; 2]> {
        let mut out = Vec::with_capacity(2);
        for cam in cams {
            let (cam_joints, px) = project(skel, cam)?;
            if !px.iter().all(|&[u, v]| cam.intrinsics.contains(u, v)) {
                return Err(Error::OutOfFrame);
            }
            let r = render(skel, &self.kinematics, cam, &self.body, self.rgb)?;
            out.push(SampleRecord {
                view: cam.view,
                depth: r.depth,
                rgb: r.rgb,
                skeleton3d_camera: cam_joints,
                joints2d: px,
                camera: cam.clone(),
                subject_id: subject,
                frame_id,
            });
        }
        let top = out.pop().expect("two views");
        let front = out.pop().expect("two views");
        Ok([front, top])
    }
}
