//! Matrix capsule layers: primary capsules, convolutional capsules and class
//! capsules, connected by votes `V = M · W` and agreement routing.

pub mod routing;
pub(crate) mod vote;

use alloc::rc::Rc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use routing::{route, RoutingHyper, RoutingState};

use crate::numerics::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Flattened 4x4 pose length.
pub const POSE: usize = 16;

/// Capsules laid out on a grid: poses `[B,H,W,C,16]`, activations `[B,H,W,C]`.
#[derive(Clone, Copy, Debug)]
pub struct CapsuleLayerState {
    pub poses: Var,
    pub activations: Var,
    pub batch: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub types: usize,
}

impl CapsuleLayerState {
    /// Capsules per batch item.
    pub fn count(&self) -> usize {
        self.grid_h * self.grid_w * self.types
    }
}

/// Geometry of one convolutional capsule layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvCapsSpec {
    pub kernel: usize,
    pub stride: usize,
    pub types: usize,
}

impl ConvCapsSpec {
    pub fn out_extent(&self, extent: usize) -> Result<usize> {
        if self.stride == 0 || self.kernel == 0 || self.kernel > extent {
            return Err(Error::arg(
                "conv_capsules",
                alloc::format!(
                    "kernel {} with stride {} does not fit a grid of extent {extent}",
                    self.kernel,
                    self.stride
                ),
            ));
        }
        Ok((extent - self.kernel) / self.stride + 1)
    }
}

pub struct PrimaryCapsVars {
    /// `[types*16, C, 1, 1]`
    pub pose_w: Var,
    pub pose_b: Var,
    /// `[types, C, 1, 1]`
    pub act_w: Var,
    pub act_b: Var,
}

pub struct ConvCapsVars {
    /// `[k*k*C_in, C_out, 16]`, shared over grid positions.
    pub w: Var,
    pub beta_a: Var,
    pub beta_u: Var,
}

pub struct ClassCapsVars {
    /// `[C_in, J, 16]`, shared over grid positions.
    pub w: Var,
    /// Learned inverse of each matrix in `w`, same shape.
    pub w_inv: Option<Var>,
    pub beta_a: Var,
    pub beta_u: Var,
}

/// Latent entities and the matrices the inverse-graphics loss pairs up.
#[derive(Clone, Copy, Debug)]
pub struct ClassCapsuleOutput {
    /// `[B, J, 16]`
    pub entities: Var,
    /// `[B, J]`
    pub activations: Var,
    pub w: Var,
    pub w_inv: Option<Var>,
}

/// Pose from a 1x1 convolution reshaped to 4x4, activation from a separate
/// 1x1 convolution squashed by the logistic function.
pub fn primary_capsules<T: Real>(g: &mut Graph<T>, features: Var, vars: &PrimaryCapsVars, types: usize) -> Result<CapsuleLayerState> {
    let fs = g.shape(features).to_vec();
    if fs.len() != 4 {
        return Err(Error::arg("primary_capsules", "features must be [B, C, H, W]"));
    }
    let (b, h, w) = (fs[0], fs[2], fs[3]);
    let pw = g.shape(vars.pose_w).to_vec();
    if pw[0] != types * POSE || pw[1] != fs[1] {
        return Err(Error::shape("primary_capsules pose weight", &[types * POSE, fs[1], 1, 1], &pw));
    }
    let poses = g.conv2d(features, vars.pose_w, Some(vars.pose_b), 1, 0)?;
    let poses = g.permute(poses, &[0, 2, 3, 1])?;
    let poses = g.reshape(poses, &[b, h, w, types, POSE])?;
    let acts = g.conv2d(features, vars.act_w, Some(vars.act_b), 1, 0)?;
    let acts = g.sigmoid(acts);
    let acts = g.permute(acts, &[0, 2, 3, 1])?;
    Ok(CapsuleLayerState {
        poses,
        activations: acts,
        batch: b,
        grid_h: h,
        grid_w: w,
        types,
    })
}

/// Votes `V[n,i,j] = M[n,i] · W[i,j]` for poses `[N,L,16]` and `W[L,H,16]`.
pub fn vote<T: Real>(g: &mut Graph<T>, poses: Var, w: Var) -> Result<Var> {
    g.caps_vote(poses, w)
}

fn split_routed<T: Real>(g: &mut Graph<T>, routed: Var, n: usize, higher: usize) -> Result<(Var, Var)> {
    let stride = POSE + 1;
    let pose_idx: Vec<usize> = (0..n * higher).flat_map(|c| (0..POSE).map(move |k| c * stride + k)).collect();
    let act_idx: Vec<usize> = (0..n * higher).map(|c| c * stride + POSE).collect();
    let poses = g.gather(routed, pose_idx.into(), &[n, higher, POSE])?;
    let acts = g.gather(routed, act_idx.into(), &[n, higher])?;
    Ok((poses, acts))
}

/// Votes are formed inside each `kernel x kernel` receptive field with weights
/// shared across positions, then routed independently per field.
pub fn conv_capsules<T: Real>(
    g: &mut Graph<T>,
    lower: &CapsuleLayerState,
    vars: &ConvCapsVars,
    spec: ConvCapsSpec,
    hyper: &RoutingHyper,
) -> Result<CapsuleLayerState> {
    let (b, hh, ww, c) = (lower.batch, lower.grid_h, lower.grid_w, lower.types);
    let (oh, ow) = (spec.out_extent(hh)?, spec.out_extent(ww)?);
    let k = spec.kernel;
    let l = k * k * c;
    let ws = g.shape(vars.w).to_vec();
    if ws != [l, spec.types, POSE] {
        return Err(Error::shape("conv_capsules weight", &[l, spec.types, POSE], &ws));
    }
    let n = b * oh * ow;
    let mut act_idx = Vec::with_capacity(n * l);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ki in 0..k {
                    for kj in 0..k {
                        let (y, x) = (oy * spec.stride + ki, ox * spec.stride + kj);
                        for ci in 0..c {
                            act_idx.push(((bi * hh + y) * ww + x) * c + ci);
                        }
                    }
                }
            }
        }
    }
    let pose_idx: Vec<usize> = act_idx.iter().flat_map(|&a| (0..POSE).map(move |e| a * POSE + e)).collect();
    let poses = g.gather(lower.poses, pose_idx.into(), &[n, l, POSE])?;
    let acts = g.gather(lower.activations, act_idx.into(), &[n, l])?;
    let votes = g.caps_vote(poses, vars.w)?;
    let routed = g.routing(votes, acts, vars.beta_a, vars.beta_u, hyper)?;
    let (poses, acts) = split_routed(g, routed, n, spec.types)?;
    let poses = g.reshape(poses, &[b, oh, ow, spec.types, POSE])?;
    let acts = g.reshape(acts, &[b, oh, ow, spec.types])?;
    Ok(CapsuleLayerState {
        poses,
        activations: acts,
        batch: b,
        grid_h: oh,
        grid_w: ow,
        types: spec.types,
    })
}

/// Constant added to class-capsule votes: the normalized grid row goes onto
/// pose entry (0,3) and the column onto (1,3).
pub fn coordinate_offsets<T: Real>(batch: usize, h: usize, w: usize, c: usize, joints: usize) -> Tensor<T> {
    let l = h * w * c;
    let mut t = Tensor::zeros(&[batch, l, joints, POSE]);
    let data = t.data_mut();
    for bi in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let row = T::lit((y as f64 + 0.5) / h as f64);
                let col = T::lit((x as f64 + 0.5) / w as f64);
                for ci in 0..c {
                    let i = (y * w + x) * c + ci;
                    for j in 0..joints {
                        let base = ((bi * l + i) * joints + j) * POSE;
                        data[base + 3] = row;
                        data[base + 7] = col;
                    }
                }
            }
        }
    }
    t
}

/// Every remaining grid capsule votes for each of the `J` class capsules
/// through a per-type matrix shared across positions; the routed means are
/// the latent entities.
pub fn class_capsules<T: Real>(
    g: &mut Graph<T>,
    lower: &CapsuleLayerState,
    vars: &ClassCapsVars,
    joints: usize,
    coord_add: bool,
    hyper: &RoutingHyper,
) -> Result<ClassCapsuleOutput> {
    let (b, hh, ww, c) = (lower.batch, lower.grid_h, lower.grid_w, lower.types);
    let ws = g.shape(vars.w).to_vec();
    if ws.len() != 3 || ws[1] != joints {
        return Err(Error::InvalidArgument {
            op: "class_capsules",
            reason: alloc::format!("class weight {ws:?} does not match {joints} joints"),
        });
    }
    if ws != [c, joints, POSE] {
        return Err(Error::shape("class_capsules weight", &[c, joints, POSE], &ws));
    }
    if let Some(w_inv) = vars.w_inv {
        if g.shape(w_inv) != ws.as_slice() {
            return Err(Error::shape("class_capsules inverse weight", &ws, g.shape(w_inv)));
        }
    }
    let l = hh * ww * c;
    let poses = g.reshape(lower.poses, &[b, l, POSE])?;
    let acts = g.reshape(lower.activations, &[b, l])?;
    let w_idx: Rc<[usize]> = (0..l)
        .flat_map(|i| {
            let ci = i % c;
            (0..joints * POSE).map(move |e| ci * joints * POSE + e)
        })
        .collect();
    let w_full = g.gather(vars.w, w_idx, &[l, joints, POSE])?;
    let mut votes = g.caps_vote(poses, w_full)?;
    if coord_add {
        let offs = coordinate_offsets::<T>(b, hh, ww, c, joints);
        votes = g.add_const(votes, &offs)?;
    }
    let routed = g.routing(votes, acts, vars.beta_a, vars.beta_u, hyper)?;
    let (entities, activations) = split_routed(g, routed, b, joints)?;
    Ok(ClassCapsuleOutput {
        entities,
        activations,
        w: vars.w,
        w_inv: vars.w_inv,
    })
}
