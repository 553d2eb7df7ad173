//! Latent entities as CSV, with a silhouette score alongside.

use std::fs;
use std::path::{Path, PathBuf};

use deca_core::metrics::{entity_cluster_score, EntitySet};
use deca_core::model::Domain;
use deca_core::synth::ViewTag;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data::Prepared;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::eval::infer;

pub const ENTITY_DIM: usize = 16;

pub fn joint_names(config: &ExperimentConfig) -> Vec<String> {
    let names = config.synth.kinematics.joint_names();
    if names.len() == config.model.joints {
        names
    } else {
        (0..config.model.joints).map(|j| format!("joint{j}")).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EntitySummary {
    pub csv: PathBuf,
    pub dataset: PathBuf,
    pub view: ViewTag,
    pub frames: usize,
    pub joints: usize,
    pub entity_dim: usize,
    pub silhouette: f64,
    pub checkpoint_epoch: usize,
}

/// Entities of every frame in the dataset view, as an `EntitySet` labelled by joint.
pub fn extract(ckpt: &Checkpoint, ds: &Dataset) -> Result<(Prepared, EntitySet)> {
    let data = Prepared::from_dataset(ds, &ckpt.config.model)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let inf = infer(&ckpt.model, &data, &idx, ckpt.config.eval.batch_size, false)?;
    let j = ckpt.config.model.joints;
    let vectors: Vec<Vec<f64>> = inf
        .entities
        .chunks(ENTITY_DIM)
        .map(|c| c.iter().map(|&v| v as f64).collect())
        .collect();
    let labels = (0..vectors.len()).map(|k| k % j).collect();
    Ok((data, EntitySet { vectors, labels }))
}

/// `frame_id,joint_index,joint,e0..e15` rows plus a sidecar with the silhouette score (same path, `.json` extension).
pub fn export_entities(ckpt: &Checkpoint, data_dir: &Path, view: Option<ViewTag>, out: &Path) -> Result<EntitySummary> {
    let view = view.unwrap_or(ckpt.config.data.view);
    let ds = Dataset::load(data_dir, view, ckpt.config.model.domain == Domain::Rgb)?;
    let (data, set) = extract(ckpt, &ds)?;
    let j = ckpt.config.model.joints;
    let names = joint_names(&ckpt.config);

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header: Vec<String> = ["frame_id", "joint_index", "joint"].map(String::from).to_vec();
        header.extend((0..ENTITY_DIM).map(|k| format!("e{k}")));
        w.write_record(&header).map_err(|e| CliError::Format(e.to_string()))?;
        for (k, v) in set.vectors.iter().enumerate() {
            let (frame, joint) = (k / j, k % j);
            let mut row = vec![data.frame_ids[frame].to_string(), joint.to_string(), names[joint].clone()];
            row.extend(v.iter().map(|x| (*x as f32).to_string()));
            w.write_record(&row).map_err(|e| CliError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(out, e))?;
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(out, buf).map_err(|e| CliError::io(out, e))?;

    let summary = EntitySummary {
        csv: out.to_path_buf(),
        dataset: data_dir.to_path_buf(),
        view,
        frames: data.len(),
        joints: j,
        entity_dim: ENTITY_DIM,
        silhouette: entity_cluster_score(&set)?,
        checkpoint_epoch: ckpt.epoch,
    };
    let side = out.with_extension("json");
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    fs::write(&side, json).map_err(|e| CliError::io(&side, e))?;
    Ok(summary)
}
