//! Pinhole cameras. Camera frame: x right, y down, z forward. Pixel centres
//! sit at integer coordinates.

use serde::{Deserialize, Serialize};

use super::geom::{cross, dot, normalize, sub, Vec3};
use super::skeleton::Skeleton3D;
use crate::{Error, Result};
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image centre.
    pub fn from_fov(width: usize, height: usize, vertical_fov_deg: f64) -> Result<Self> {
        if width == 0 || height == 0 || !(vertical_fov_deg > 0.0 && vertical_fov_deg < 180.0) {
            return Err(Error::arg(
                "intrinsics",
                "need a positive image size and a field of view in (0, 180)",
            ));
        }
        let f = (height as f64 / 2.0) / libm::tan(vertical_fov_deg.to_radians() / 2.0);
        Ok(Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        })
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewTag {
    Front,
    Top,
    Free,
}

impl ViewTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewTag::Front => "front",
            ViewTag::Top => "top",
            ViewTag::Free => "free",
        }
    }
}

/// Rigid 4x4 transform stored row-major.
pub type Extrinsics = [[f64; 4]; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// World to camera.
    pub extrinsics: Extrinsics,
    pub view: ViewTag,
}

/// Rotation rows `[right, down, forward]` for a camera at `eye` looking at `target`.
pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3) -> Result<Extrinsics> {
    let f = normalize(sub(target, eye));
    let r = cross(f, up_hint);
    if dot(r, r) < 1e-12 || dot(f, f) < 0.5 {
        return Err(Error::arg("look_at", "view direction is degenerate or parallel to the up hint"));
    }
    let r = normalize(r);
    let d = cross(f, r);
    let rows = [r, d, f];
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&rows[i]);
        m[i][3] = -dot(rows[i], eye);
    }
    m[3][3] = 1.0;
    Ok(m)
}

pub fn transform_point(m: &Extrinsics, p: Vec3) -> Vec3 {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

/// Inverse of a rigid transform.
pub fn rigid_inverse(m: &Extrinsics) -> Extrinsics {
    let mut inv = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = m[j][i];
        }
    }
    for i in 0..3 {
        inv[i][3] = -(0..3).map(|k| inv[i][k] * m[k][3]).sum::<f64>();
    }
    inv[3][3] = 1.0;
    inv
}

pub fn compose(a: &Extrinsics, b: &Extrinsics) -> Extrinsics {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics, view: ViewTag) -> Result<Self> {
        let cam = CameraModel {
            intrinsics,
            extrinsics,
            view,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Rotation block orthonormal within 1e-6 with determinant +1.
    pub fn validate(&self) -> Result<()> {
        let m = &self.extrinsics;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(d - want) > 1e-6 {
                    return Err(Error::arg("camera", "extrinsic rotation is not orthonormal"));
                }
            }
        }
        let r0 = [m[0][0], m[0][1], m[0][2]];
        let r1 = [m[1][0], m[1][1], m[1][2]];
        let r2 = [m[2][0], m[2][1], m[2][2]];
        if libm::fabs(dot(cross(r0, r1), r2) - 1.0) > 1e-6 {
            return Err(Error::arg("camera", "extrinsic rotation has determinant -1"));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::arg("camera", "extrinsics last row must be [0 0 0 1]"));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        transform_point(&self.extrinsics, p)
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project_camera_point(&self, p: Vec3) -> Result<[f64; 2]> {
        if !(p[2] > 0.0) {
            return Err(Error::BehindCamera { joint: 0, z: p[2] });
        }
        let k = &self.intrinsics;
        Ok([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])
    }

    /// Camera-frame point at depth `z` seen through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Vec3 {
        let k = &self.intrinsics;
        [(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z]
    }

    /// Rigid transform carrying this camera's frame into `other`'s frame.
    pub fn relative_to(&self, other: &CameraModel) -> Extrinsics {
        compose(&other.extrinsics, &rigid_inverse(&self.extrinsics))
    }
}

/// Camera-frame joints and their pixel projections.
pub fn project(skeleton: &Skeleton3D, camera: &CameraModel) -> Result<(Vec<[f64; 3]>, Vec<[f64; 2]>)> {
    let mut cam = Vec::with_capacity(skeleton.len());
    let mut px = Vec::with_capacity(skeleton.len());
    for (j, &p) in skeleton.joints.iter().enumerate() {
        let c = camera.to_camera(p);
        let uv = camera
            .project_camera_point(c)
            .map_err(|_| Error::BehindCamera { joint: j, z: c[2] })?;
        cam.push(c);
        px.push(uv);
    }
    Ok((cam, px))
}

/// Camera placement of the paired rig.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub front_eye: [f64; 3],
    pub front_target: [f64; 3],
    pub front_fov_deg: f64,
    pub top_eye: [f64; 3],
    pub top_target: [f64; 3],
    pub top_fov_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            front_eye: [0.0, -3.0, 2.5],
            front_target: [0.0, 0.0, 1.0],
            front_fov_deg: 45.0,
            top_eye: [0.0, 0.0, 3.0],
            top_target: [0.0, 0.0, 0.0],
            top_fov_deg: 80.0,
        }
    }
}

impl RigConfig {
    pub fn camera(&self, view: ViewTag, width: usize, height: usize) -> Result<CameraModel> {
        let (eye, target, fov, up) = match view {
            ViewTag::Front => (self.front_eye, self.front_target, self.front_fov_deg, [0.0, 0.0, 1.0]),
            ViewTag::Top => (self.top_eye, self.top_target, self.top_fov_deg, [0.0, 1.0, 0.0]),
            ViewTag::Free => return Err(Error::arg("rig", "the rig has only front and top cameras")),
        };
        CameraModel::new(Intrinsics::from_fov(width, height, fov)?, look_at(eye, target, up)?, view)
    }
}
