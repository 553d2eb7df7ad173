//! Ray-cast z-buffer of spheres at joints and capsules along bones.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, Intrinsics};
use super::geom::{add, dot, normalize, scale, sub, Vec3};
use super::skeleton::{KinematicsConfig, Skeleton3D};
use crate::{Error, Result};

/// Depth image in metres (z along the optical axis), row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        DepthMap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.width * self.height {
            return Err(Error::shape("depth map", &[self.height, self.width], &[self.values.len()]));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite { op: "depth map" });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64, part: usize },
    Capsule { a: Vec3, b: Vec3, radius: f64, part: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyShapeConfig {
    /// Sphere radius per joint; zero disables the sphere.
    pub joint_radius: Vec<f64>,
    /// Capsule radius per bone, indexed by child joint; zero disables it.
    pub bone_radius: Vec<f64>,
    /// Background depth.
    pub far: f64,
}

impl Default for BodyShapeConfig {
    fn default() -> Self {
        BodyShapeConfig {
            joint_radius: vec![
                0.11, 0.06, 0.06, 0.06, 0.05, 0.05, 0.05, 0.05, 0.12, 0.08, 0.08, 0.06, 0.06, 0.055, 0.055,
            ],
            bone_radius: vec![
                0.05, 0.13, 0.06, 0.06, 0.05, 0.05, 0.045, 0.045, 0.0, 0.11, 0.11, 0.07, 0.07, 0.055, 0.055,
            ],
            far: 5.0,
        }
    }
}

impl BodyShapeConfig {
    /// Primitives in the camera frame.
    pub fn primitives(&self, kin: &KinematicsConfig, skeleton: &Skeleton3D, camera: &CameraModel) -> Result<Vec<Primitive>> {
        let n = skeleton.len();
        if self.joint_radius.len() != n || self.bone_radius.len() != n || kin.joints.len() != n {
            return Err(Error::shape("body shape", &[n], &[self.joint_radius.len()]));
        }
        let cam: Vec<Vec3> = skeleton.joints.iter().map(|&p| camera.to_camera(p)).collect();
        let mut prims = Vec::new();
        for j in 0..n {
            if self.joint_radius[j] > 0.0 {
                prims.push(Primitive::Sphere {
                    center: cam[j],
                    radius: self.joint_radius[j],
                    part: j,
                });
            }
            if let (Some(p), true) = (kin.joints[j].parent, self.bone_radius[j] > 0.0) {
                prims.push(Primitive::Capsule {
                    a: cam[p],
                    b: cam[j],
                    radius: self.bone_radius[j],
                    part: j,
                });
            }
        }
        Ok(prims)
    }
}

/// Nearest positive ray parameter and the outward normal there.
fn hit_sphere(dir: Vec3, c: Vec3, r: f64) -> Option<(f64, Vec3)> {
    let a = dot(dir, dir);
    let b = dot(dir, c);
    let disc = b * b - a * (dot(c, c) - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = (b - libm::sqrt(disc)) / a;
    (t > 0.0).then(|| (t, scale(sub(scale(dir, t), c), 1.0 / r)))
}

fn hit_capsule(dir: Vec3, pa: Vec3, pb: Vec3, r: f64) -> Option<(f64, Vec3)> {
    let mut best = hit_sphere(dir, pa, r);
    if let Some(h) = hit_sphere(dir, pb, r) {
        if best.is_none_or(|b| h.0 < b.0) {
            best = Some(h);
        }
    }
    let ba = sub(pb, pa);
    let baba = dot(ba, ba);
    if baba > 0.0 {
        let oa = scale(pa, -1.0);
        let bard = dot(ba, dir);
        let baoa = dot(ba, oa);
        let rdoa = dot(dir, oa);
        let oaoa = dot(oa, oa);
        let a = baba * dot(dir, dir) - bard * bard;
        let b = baba * rdoa - baoa * bard;
        let c = baba * oaoa - baoa * baoa - r * r * baba;
        let h = b * b - a * c;
        if a > 1e-12 && h >= 0.0 {
            let t = (-b - libm::sqrt(h)) / a;
            let y = baoa + t * bard;
            if t > 0.0 && y > 0.0 && y < baba && best.is_none_or(|bst| t < bst.0) {
                let p = scale(dir, t);
                let axis = add(pa, scale(ba, y / baba));
                best = Some((t, normalize(sub(p, axis))));
            }
        }
    }
    best
}

/// Rendered views of one pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub depth: DepthMap,
    /// `H*W*3` bytes, present when requested.
    pub rgb: Option<Vec<u8>>,
}

fn part_colour(part: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 8] = [
        [0.90, 0.75, 0.60],
        [0.85, 0.30, 0.25],
        [0.25, 0.55, 0.85],
        [0.30, 0.75, 0.35],
        [0.90, 0.70, 0.20],
        [0.60, 0.35, 0.75],
        [0.20, 0.70, 0.70],
        [0.80, 0.45, 0.60],
    ];
    PALETTE[part % PALETTE.len()]
}

/// Z-buffer over `prims`; pixels hit by nothing get `far`.
pub fn render_primitives(prims: &[Primitive], k: &Intrinsics, far: f64, with_rgb: bool) -> Rendered {
    let (w, h) = (k.width, k.height);
    let mut depth = DepthMap::filled(w, h, far as f32);
    let mut rgb = with_rgb.then(|| vec![0u8; w * h * 3]);
    for y in 0..h {
        for x in 0..w {
            let dir = [(x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0];
            let mut best: Option<(f64, Vec3, usize)> = None;
            for prim in prims {
                let hit = match *prim {
                    Primitive::Sphere { center, radius, part } => hit_sphere(dir, center, radius).map(|(t, n)| (t, n, part)),
                    Primitive::Capsule { a, b, radius, part } => hit_capsule(dir, a, b, radius).map(|(t, n)| (t, n, part)),
                };
                if let Some(hh) = hit {
                    if best.is_none_or(|b| hh.0 < b.0) {
                        best = Some(hh);
                    }
                }
            }
            if let Some((t, n, part)) = best {
                if t < far {
                    depth.values[y * w + x] = t as f32;
                    if let Some(img) = rgb.as_mut() {
                        let shade = 0.3 + 0.7 * libm::fabs(dot(n, normalize(dir)));
                        let c = part_colour(part);
                        for ch in 0..3 {
                            img[(y * w + x) * 3 + ch] = libm::round((c[ch] * shade * 255.0).clamp(0.0, 255.0)) as u8;
                        }
                    }
                }
            }
        }
    }
    Rendered { depth, rgb }
}

/// Render a skeleton as seen by `camera`.
pub fn render(
    skeleton: &Skeleton3D,
    kin: &KinematicsConfig,
    camera: &CameraModel,
    body: &BodyShapeConfig,
    with_rgb: bool,
) -> Result<Rendered> {
    if !(body.far > 0.0) {
        return Err(Error::arg("render", "far plane must be positive"));
    }
    let k = &camera.intrinsics;
    let visible = skeleton.joints.iter().any(|&p| {
        let c = camera.to_camera(p);
        camera.project_camera_point(c).is_ok_and(|[u, v]| k.contains(u, v))
    });
    if !skeleton.is_empty() && !visible {
        return Err(Error::OutOfFrame);
    }
    let prims = body.primitives(kin, skeleton, camera)?;
    Ok(render_primitives(&prims, k, body.far, with_rgb))
}

pub fn render_depth(skeleton: &Skeleton3D, kin: &KinematicsConfig, camera: &CameraModel, body: &BodyShapeConfig) -> Result<DepthMap> {
    Ok(render(skeleton, kin, camera, body, false)?.depth)
}
