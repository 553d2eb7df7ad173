//! Dataset samples turned into model inputs and regression targets.

use deca_core::metrics::Pose;
use deca_core::model::{normalize_depth, normalize_rgb, Domain, ModelConfig, TargetNorm, Targets};
use deca_core::Tensor;

use crate::dataset::Dataset;
use crate::error::{CliError, Result};

/// A whole split held in memory.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub channels: usize,
    pub side: usize,
    pub joints: usize,
    /// `[N, C, S, S]` in `[0, 1]`.
    pub inputs: Vec<f32>,
    /// Camera-frame joints in metres.
    pub poses: Vec<Pose>,
    /// `[N, 2J]` pixel joints divided by the image size.
    pub joints2d: Vec<f32>,
    /// `[N, side²]` depth-map targets when the model reconstructs depth.
    pub depth_targets: Option<Vec<f32>>,
    pub depth_side: usize,
    pub frame_ids: Vec<u64>,
}

/// Nearness `far − depth` averaged over `factor x factor` blocks; zero on background.
fn depth_target(depth: &[f32], side_in: usize, side_out: usize, far: f32) -> Vec<f32> {
    let factor = side_in / side_out;
    let mut out = vec![0.0f32; side_out * side_out];
    let norm = 1.0 / (factor * factor) as f32;
    for y in 0..side_in {
        for x in 0..side_in {
            let v = (far - depth[y * side_in + x]).max(0.0);
            out[(y / factor) * side_out + x / factor] += v * norm;
        }
    }
    out
}

impl Prepared {
    pub fn from_dataset(ds: &Dataset, model: &ModelConfig) -> Result<Self> {
        let side = model.image_size;
        let m = &ds.manifest;
        let mut diffs = Vec::new();
        if m.image_width != side || m.image_height != side {
            diffs.push(format!(
                "image size: model {side}x{side}, dataset {}x{}",
                m.image_width, m.image_height
            ));
        }
        if m.joints != model.joints {
            diffs.push(format!("joints: model {}, dataset {}", model.joints, m.joints));
        }
        if model.domain == Domain::Rgb && !m.rgb {
            diffs.push("domain: model expects rgb, dataset has depth only".into());
        }
        if !diffs.is_empty() {
            return Err(CliError::Incompatible { diffs });
        }
        let ds_side = model.decoder.depth_side;
        let wants_dm = model.tasks.contains(deca_core::model::Task::DepthMap);
        if wants_dm && (ds_side == 0 || !side.is_multiple_of(ds_side)) {
            return Err(CliError::Config(format!(
                "model.decoder.depth_side {ds_side} must divide the image size {side}"
            )));
        }
        let far = m.far as f32;
        let n = ds.len();
        let channels = model.domain.channels();
        let mut inputs = Vec::with_capacity(n * channels * side * side);
        let mut joints2d = Vec::with_capacity(n * 2 * model.joints);
        let mut dm = wants_dm.then(|| Vec::with_capacity(n * ds_side * ds_side));
        for s in &ds.samples {
            match model.domain {
                Domain::Depth => inputs.extend(normalize_depth(&s.depth.values, far)?),
                Domain::Rgb => {
                    let rgb = s.rgb.as_ref().ok_or_else(|| CliError::Format("sample lacks rgb".into()))?;
                    inputs.extend(normalize_rgb(rgb, side, side)?)
                }
            }
            for uv in &s.joints2d {
                joints2d.push((uv[0] / side as f64) as f32);
                joints2d.push((uv[1] / side as f64) as f32);
            }
            if let Some(dm) = dm.as_mut() {
                dm.extend(depth_target(&s.depth.values, side, ds_side, far));
            }
        }
        Ok(Prepared {
            channels,
            side,
            joints: model.joints,
            inputs,
            poses: ds.samples.iter().map(|s| s.skeleton3d_camera.clone()).collect(),
            joints2d,
            depth_targets: dm,
            depth_side: ds_side,
            frame_ids: ds.frame_ids(),
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    fn image_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn subset(&self, idx: &[usize]) -> Prepared {
        let il = self.image_len();
        let j2 = 2 * self.joints;
        let dl = self.depth_side * self.depth_side;
        Prepared {
            channels: self.channels,
            side: self.side,
            joints: self.joints,
            inputs: idx
                .iter()
                .flat_map(|&i| self.inputs[i * il..(i + 1) * il].iter().copied())
                .collect(),
            poses: idx.iter().map(|&i| self.poses[i].clone()).collect(),
            joints2d: idx
                .iter()
                .flat_map(|&i| self.joints2d[i * j2..(i + 1) * j2].iter().copied())
                .collect(),
            depth_targets: self
                .depth_targets
                .as_ref()
                .map(|d| idx.iter().flat_map(|&i| d[i * dl..(i + 1) * dl].iter().copied()).collect()),
            depth_side: self.depth_side,
            frame_ids: idx.iter().map(|&i| self.frame_ids[i]).collect(),
        }
    }

    pub fn input_batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let il = self.image_len();
        let data = idx
            .iter()
            .flat_map(|&i| self.inputs[i * il..(i + 1) * il].iter().copied())
            .collect();
        Ok(Tensor::new(&[idx.len(), self.channels, self.side, self.side], data)?)
    }

    pub fn targets(&self, idx: &[usize], norm: &TargetNorm) -> Result<Targets<f32>> {
        let j = self.joints;
        let y3d = idx
            .iter()
            .flat_map(|&i| {
                let flat: Vec<f64> = self.poses[i].iter().flatten().copied().collect();
                norm.normalize(&flat).into_iter().map(|v| v as f32)
            })
            .collect();
        let y2d = idx
            .iter()
            .flat_map(|&i| self.joints2d[i * 2 * j..(i + 1) * 2 * j].iter().copied())
            .collect();
        let dl = self.depth_side * self.depth_side;
        let dm = match &self.depth_targets {
            Some(d) => Some(Tensor::new(
                &[idx.len(), dl],
                idx.iter().flat_map(|&i| d[i * dl..(i + 1) * dl].iter().copied()).collect(),
            )?),
            None => None,
        };
        Ok(Targets {
            y3d: Tensor::new(&[idx.len(), 3 * j], y3d)?,
            y2d: Some(Tensor::new(&[idx.len(), 2 * j], y2d)?),
            dm,
        })
    }
}
