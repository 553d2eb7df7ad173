//! Articulated 15-joint skeleton posed by forward kinematics.
//!
//! World frame: z up, the subject stands near the origin and at zero yaw faces
//! −y. The subject's right side is −x.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geom::{add, mat_vec, mul3, rot_x, rot_y, rot_z, scale, Mat3, Vec3, IDENTITY3};
use crate::{Error, Result};

pub const ITOP_JOINTS: [&str; 15] = [
    "head",
    "neck",
    "r_shoulder",
    "l_shoulder",
    "r_elbow",
    "l_elbow",
    "r_hand",
    "l_hand",
    "torso",
    "r_hip",
    "l_hip",
    "r_knee",
    "l_knee",
    "r_foot",
    "l_foot",
];

/// Inclusive range `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Range { min: v, max: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.min - tol && v <= self.max + tol
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

/// One joint of the tree. The bone runs from `parent` to this joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    /// Bone direction in the parent's frame at zero angles.
    pub rest_direction: [f64; 3],
    pub length: Range,
    /// Nominal bone length, used by the canonical pose.
    pub nominal_length: f64,
    /// Local rotation limits about x, y, z in radians, applied as `Rz·Ry·Rx`.
    pub angle_limits: [Range; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    pub joints: Vec<JointSpec>,
    /// Height of the root above the floor.
    pub root_height: f64,
    /// Horizontal root offset, sampled uniformly in `[-v, v]` on x and y.
    pub root_offset: f64,
    /// Global yaw about world z, radians.
    pub yaw: Range,
}

fn joint(name: &str, parent: Option<usize>, dir: [f64; 3], nominal: f64, spread: f64, limits: [(f64, f64); 3]) -> JointSpec {
    let n = libm::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    let d = if n > 0.0 { [dir[0] / n, dir[1] / n, dir[2] / n] } else { dir };
    JointSpec {
        name: name.to_string(),
        parent,
        rest_direction: d,
        length: Range::new(nominal * (1.0 - spread), nominal * (1.0 + spread)),
        nominal_length: nominal,
        angle_limits: limits.map(|(a, b)| Range::new(a, b)),
    }
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        let z = (0.0, 0.0);
        let s = 0.12;
        let up = [0.0, 0.0, 1.0];
        let down = [0.0, 0.0, -1.0];
        let right = [-1.0, 0.0, 0.0];
        let left = [1.0, 0.0, 0.0];
        let joints = vec![
            joint("head", Some(1), up, 0.22, s, [(-0.35, 0.35), (-0.25, 0.25), z]),
            joint("neck", Some(8), up, 0.30, s, [(-0.2, 0.2), (-0.15, 0.15), z]),
            joint("r_shoulder", Some(1), right, 0.18, s, [z, (-0.1, 0.1), z]),
            joint("l_shoulder", Some(1), left, 0.18, s, [z, (-0.1, 0.1), z]),
            joint("r_elbow", Some(2), right, 0.28, s, [z, (-1.4, 0.6), (-0.5, 1.2)]),
            joint("l_elbow", Some(3), left, 0.28, s, [z, (-0.6, 1.4), (-1.2, 0.5)]),
            joint("r_hand", Some(4), right, 0.26, s, [z, (-0.3, 0.3), (0.0, 1.5)]),
            joint("l_hand", Some(5), left, 0.26, s, [z, (-0.3, 0.3), (-1.5, 0.0)]),
            joint("torso", None, [0.0; 3], 0.0, 0.0, [(-0.15, 0.15), (-0.1, 0.1), z]),
            joint("r_hip", Some(8), [-0.1, 0.0, -0.22], 0.2417, s, [z, z, z]),
            joint("l_hip", Some(8), [0.1, 0.0, -0.22], 0.2417, s, [z, z, z]),
            joint("r_knee", Some(9), down, 0.42, s, [(-1.0, 0.3), (-0.3, 0.3), z]),
            joint("l_knee", Some(10), down, 0.42, s, [(-1.0, 0.3), (-0.3, 0.3), z]),
            joint("r_foot", Some(11), down, 0.40, s, [(0.0, 1.2), z, z]),
            joint("l_foot", Some(12), down, 0.40, s, [(0.0, 1.2), z, z]),
        ];
        KinematicsConfig {
            joints,
            root_height: 1.1,
            root_offset: 0.3,
            yaw: Range::new(-core::f64::consts::FRAC_PI_4, core::f64::consts::FRAC_PI_4),
        }
    }
}

/// Joint positions in metres, world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub joints: Vec<[f64; 3]>,
    pub joint_names: Vec<String>,
}

impl Skeleton3D {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Sampled articulation: bone lengths, local angles, root placement and yaw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub lengths: Vec<f64>,
    pub angles: Vec<[f64; 3]>,
    pub root: [f64; 3],
    pub yaw: f64,
}

impl KinematicsConfig {
    /// Parents are visited before children; errors on cycles or a missing root.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.joints.len();
        for (j, spec) in self.joints.iter().enumerate() {
            let mut seen = vec![false; n];
            let mut cur = j;
            seen[cur] = true;
            while let Some(p) = self.joints[cur].parent {
                if p >= n {
                    return Err(Error::arg(
                        "kinematics",
                        alloc::format!("joint {} has parent {p} out of range", spec.name),
                    ));
                }
                if seen[p] {
                    return Err(Error::CyclicSkeleton { joint: j });
                }
                seen[p] = true;
                cur = p;
            }
        }
        if n > 0 && self.joints.iter().filter(|j| j.parent.is_none()).count() != 1 {
            return Err(Error::arg("kinematics", "the joint tree needs exactly one root"));
        }
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while order.len() < n {
            for j in 0..n {
                if !placed[j] && self.joints[j].parent.is_none_or(|p| placed[p]) {
                    placed[j] = true;
                    order.push(j);
                }
            }
        }
        Ok(order)
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    /// Parameters of the canonical pose: nominal lengths, zero angles, zero yaw.
    pub fn canonical_params(&self) -> PoseParams {
        PoseParams {
            lengths: self.joints.iter().map(|j| j.nominal_length).collect(),
            angles: vec![[0.0; 3]; self.joints.len()],
            root: [0.0, 0.0, self.root_height],
            yaw: 0.0,
        }
    }

    pub fn sample_lengths<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.joints.iter().map(|j| j.length.sample(rng)).collect()
    }

    /// Angles, root offset and yaw drawn uniformly within limits, with the given lengths.
    pub fn sample_params<R: Rng + ?Sized>(&self, lengths: Vec<f64>, rng: &mut R) -> PoseParams {
        let angles = self
            .joints
            .iter()
            .map(|j| {
                [
                    j.angle_limits[0].sample(rng),
                    j.angle_limits[1].sample(rng),
                    j.angle_limits[2].sample(rng),
                ]
            })
            .collect();
        let off = Range::new(-self.root_offset, self.root_offset);
        let root = [off.sample(rng), off.sample(rng), self.root_height];
        PoseParams {
            lengths,
            angles,
            root,
            yaw: self.yaw.sample(rng),
        }
    }

    pub fn forward_kinematics(&self, params: &PoseParams) -> Result<Skeleton3D> {
        let order = self.topological_order()?;
        let n = self.joints.len();
        if params.lengths.len() != n || params.angles.len() != n {
            return Err(Error::shape("forward_kinematics", &[n], &[params.lengths.len()]));
        }
        let mut rot = vec![IDENTITY3; n];
        let mut pos = vec![[0.0; 3]; n];
        for j in order {
            let [ax, ay, az] = params.angles[j];
            let local = mul3(&rot_z(az), &mul3(&rot_y(ay), &rot_x(ax)));
            match self.joints[j].parent {
                None => {
                    rot[j] = mul3(&rot_z(params.yaw), &local);
                    pos[j] = params.root;
                }
                Some(p) => {
                    let r: Mat3 = mul3(&rot[p], &local);
                    let bone: Vec3 = scale(mat_vec(&r, &self.joints[j].rest_direction), params.lengths[j]);
                    rot[j] = r;
                    pos[j] = add(pos[p], bone);
                }
            }
        }
        Ok(Skeleton3D {
            joints: pos,
            joint_names: self.joint_names(),
        })
    }

    /// Bone lengths of `skeleton` indexed by child joint; 0 for the root.
    pub fn bone_lengths(&self, skeleton: &Skeleton3D) -> Vec<f64> {
        self.joints
            .iter()
            .enumerate()
            .map(|(j, spec)| match spec.parent {
                None => 0.0,
                Some(p) => {
                    let d = super::geom::sub(skeleton.joints[j], skeleton.joints[p]);
                    super::geom::norm(d)
                }
            })
            .collect()
    }
}

/// Forward-kinematics skeleton from freshly sampled lengths, angles, root and yaw.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, kinematics: &KinematicsConfig) -> Result<Skeleton3D> {
    kinematics.topological_order()?;
    let lengths = kinematics.sample_lengths(rng);
    let params = kinematics.sample_params(lengths, rng);
    kinematics.forward_kinematics(&params)
}

/// Nominal lengths with every angle at zero: arms straight out to the sides.
pub fn canonical_pose(kinematics: &KinematicsConfig) -> Result<Skeleton3D> {
    kinematics.forward_kinematics(&kinematics.canonical_params())
}
