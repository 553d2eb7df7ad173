//! On-disk dataset format.
//!
//! ```text
//! <dir>/meta.json
//! <dir>/samples/<view>_<frame:06>.depth   "DCAD", u32 width, u32 height, f32[h*w] LE metres
//! <dir>/samples/<view>_<frame:06>.json    camera, camera-frame joints, pixel joints, ids
//! <dir>/samples/<view>_<frame:06>.rgb     optional raw 8-bit H*W*3
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use deca_core::synth::{CameraModel, DepthMap, GenConfig, SampleRecord, ViewTag};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEPTH_MAGIC: &[u8; 4] = b"DCAD";
/// Tolerance of the 2D/3D consistency check run on load.
pub const PROJECTION_TOL_PX: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub joints: usize,
    pub joint_names: Vec<String>,
    pub cameras: Vec<CameraModel>,
    pub frame_count: usize,
    pub seed: u64,
    pub image_width: usize,
    pub image_height: usize,
    /// Background depth in metres.
    pub far: f64,
    pub rgb: bool,
    pub frame_ids: Vec<u64>,
    /// Sample stems, `<view>_<frame:06>`.
    pub samples: Vec<String>,
    /// Generator settings when the set is synthetic.
    pub generator: Option<GenConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub view: ViewTag,
    pub frame_id: u64,
    pub subject_id: u32,
    pub camera: CameraModel,
    pub skeleton3d_camera: Vec<[f64; 3]>,
    pub joints2d: Vec<[f64; 2]>,
}

pub fn sample_stem(view: ViewTag, frame_id: u64) -> String {
    format!("{}_{frame_id:06}", view.as_str())
}

/// Write through a temporary file and rename, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + d.values.len() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    for v in &d.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 12 || &bytes[..4] != DEPTH_MAGIC {
        return Err(CliError::Format("depth file lacks the DCAD header".into()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != w * h * 4 {
        return Err(CliError::Format(format!(
            "depth payload holds {} bytes, expected {} for {w}x{h}",
            body.len(),
            w * h * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let d = DepthMap {
        width: w,
        height: h,
        values,
    };
    d.validate()?;
    Ok(d)
}

pub fn write_sample(samples_dir: &Path, s: &SampleRecord) -> Result<String> {
    let stem = sample_stem(s.view, s.frame_id);
    write_atomic(&samples_dir.join(format!("{stem}.depth")), &encode_depth(&s.depth))?;
    if let Some(rgb) = &s.rgb {
        write_atomic(&samples_dir.join(format!("{stem}.rgb")), rgb)?;
    }
    let meta = SampleMeta {
        view: s.view,
        frame_id: s.frame_id,
        subject_id: s.subject_id,
        camera: s.camera.clone(),
        skeleton3d_camera: s.skeleton3d_camera.clone(),
        joints2d: s.joints2d.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write_atomic(&samples_dir.join(format!("{stem}.json")), &json)?;
    Ok(stem)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_sample(samples_dir: &Path, stem: &str, rgb: bool) -> Result<SampleRecord> {
    let meta: SampleMeta = serde_json::from_slice(&read(&samples_dir.join(format!("{stem}.json")))?)
        .map_err(|e| CliError::Format(format!("{stem}.json: {e}")))?;
    let depth =
        decode_depth(&read(&samples_dir.join(format!("{stem}.depth")))?).map_err(|e| CliError::Format(format!("{stem}.depth: {e}")))?;
    let rgb = if rgb {
        let bytes = read(&samples_dir.join(format!("{stem}.rgb")))?;
        if bytes.len() != depth.width * depth.height * 3 {
            return Err(CliError::Format(format!("{stem}.rgb has {} bytes", bytes.len())));
        }
        Some(bytes)
    } else {
        None
    };
    meta.camera.validate()?;
    let rec = SampleRecord {
        view: meta.view,
        depth,
        rgb,
        skeleton3d_camera: meta.skeleton3d_camera,
        joints2d: meta.joints2d,
        camera: meta.camera,
        subject_id: meta.subject_id,
        frame_id: meta.frame_id,
    };
    rec.check_projection(PROJECTION_TOL_PX)?;
    Ok(rec)
}

/// Render every frame from both cameras and write the set plus `meta.json`.
pub fn generate_dataset(config: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| CliError::io(&samples_dir, e))?;
    let mut stems = Vec::with_capacity(2 * config.frames);
    let mut cameras = Vec::new();
    for frame_id in config.frame_ids() {
        for rec in config.generate_frame(frame_id)? {
            if cameras.len() < 2 {
                cameras.push(rec.camera.clone());
            }
            stems.push(write_sample(&samples_dir, &rec)?);
        }
    }
    if cameras.is_empty() {
        for v in GenConfig::views() {
            cameras.push(config.rig.camera(v, config.image_size, config.image_size)?);
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        joints: config.kinematics.joints.len(),
        joint_names: config.kinematics.joint_names(),
        cameras,
        frame_count: config.frames,
        seed: config.seed,
        image_width: config.image_size,
        image_height: config.image_size,
        far: config.body.far,
        rgb: config.rgb,
        frame_ids: config.frame_ids().collect(),
        samples: stems,
        generator: Some(config.clone()),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&out_dir.join("meta.json"), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("meta.json");
    let m: Manifest = serde_json::from_slice(&read(&path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    if m.version != FORMAT_VERSION {
        return Err(CliError::Format(format!(
            "{}: format version {} is not supported (expected {FORMAT_VERSION})",
            path.display(),
            m.version
        )));
    }
    Ok(m)
}

/// Samples of one view, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub view: ViewTag,
    pub samples: Vec<SampleRecord>,
}

impl Dataset {
    pub fn load(dir: &Path, view: ViewTag, with_rgb: bool) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if with_rgb && !manifest.rgb {
            return Err(CliError::Format(format!("{} has no rgb renders", dir.display())));
        }
        let prefix = format!("{}_", view.as_str());
        let samples_dir = dir.join("samples");
        let samples = manifest
            .samples
            .iter()
            .filter(|s| s.starts_with(&prefix))
            .map(|stem| read_sample(&samples_dir, stem, with_rgb))
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            return Err(CliError::Format(format!("{} has no {} samples", dir.display(), view.as_str())));
        }
        for s in &samples {
            if s.skeleton3d_camera.len() != manifest.joints
                || s.depth.width != manifest.image_width
                || s.depth.height != manifest.image_height
            {
                return Err(CliError::Format(format!(
                    "sample {} disagrees with meta.json on joints or image size",
                    sample_stem(s.view, s.frame_id)
                )));
            }
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            view,
            samples,
        })
    }

    pub fn frame_ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.frame_id).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
