//! Epoch loop, validation and per-epoch checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use deca_core::losses::LossReport;
use deca_core::metrics::{map_at, mpjpe, Pose};
use deca_core::model::{Domain, Model, TargetNorm};
use deca_core::numerics::Adam;
use deca_core::{Graph, SeededRng};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{adam_config, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::Prepared;
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::eval::{infer, mean_reports};

/// Stream ids carved out of the run seed.
const STREAM_TRAIN: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;

fn stream(seed: u64, id: u64) -> SeededRng {
    let mut r = SeededRng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationLog {
    pub frames: usize,
    pub loss: LossReport,
    pub map_mean: f64,
    pub mpjpe_mean_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogLine {
    Start {
        train_frames: usize,
        val_frames: usize,
        parameters: usize,
    },
    Batch {
        epoch: usize,
        batch: usize,
        loss: LossReport,
    },
    Epoch {
        epoch: usize,
        train: LossReport,
        val: Option<ValidationLog>,
    },
}

/// Seeded split of `0..n` into sorted training and validation indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, STREAM_SPLIT));
    let n_val = ((n as f64) * fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Checkpoint of a freshly initialized model for `data` under `config`.
pub fn initialize(config: &ExperimentConfig, data: &Prepared, train_idx: &[usize], val_idx: &[usize]) -> Result<Checkpoint> {
    let seed = config.train.seed;
    let flat: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| data.poses[i].iter().flatten().copied().collect())
        .collect();
    let mut model = Model::<f32>::build(config.model.clone(), &mut stream(seed, STREAM_INIT))?;
    model.target_norm = TargetNorm::fit(&flat)?;
    let adam = Adam::new(adam_config(config), &model.params);
    Ok(Checkpoint {
        config: config.clone(),
        epoch: 0,
        model,
        adam,
        rng: stream(seed, STREAM_TRAIN),
        train_frame_ids: train_idx.iter().map(|&i| data.frame_ids[i]).collect(),
        val_frame_ids: val_idx.iter().map(|&i| data.frame_ids[i]).collect(),
    })
}

fn finite_report(r: &LossReport) -> bool {
    r.total.is_finite() && r.per_task.values().all(|v| v.is_finite())
}

fn validate_epoch(ckpt: &Checkpoint, data: &Prepared, val_idx: &[usize]) -> Result<Option<ValidationLog>> {
    if val_idx.is_empty() {
        return Ok(None);
    }
    let cfg = &ckpt.config;
    let inf = infer(&ckpt.model, data, val_idx, cfg.eval.batch_size, true)?;
    let gt: Vec<Pose> = val_idx.iter().map(|&i| data.poses[i].clone()).collect();
    Ok(Some(ValidationLog {
        frames: val_idx.len(),
        loss: inf.loss.expect("loss requested"),
        map_mean: map_at(&inf.poses, &gt, cfg.eval.radius, &cfg.eval.grouping)?.mean,
        mpjpe_mean_mm: mpjpe(&inf.poses, &gt, &cfg.eval.grouping)?.mean,
    }))
}

/// One epoch of shuffled mini-batch Adam steps. Returns the batch-weighted mean loss.
pub fn train_epoch(
    ckpt: &mut Checkpoint,
    data: &Prepared,
    train_idx: &[usize],
    log: &mut dyn FnMut(&LogLine) -> Result<()>,
) -> Result<LossReport> {
    let epoch = ckpt.epoch + 1;
    let bs = ckpt.config.train.batch_size;
    let mut order = train_idx.to_vec();
    order.shuffle(&mut ckpt.rng);
    let mut reports = Vec::new();
    for (b, chunk) in order.chunks(bs).enumerate() {
        let mut g = Graph::new();
        let out = ckpt.model.forward(&mut g, data.input_batch(chunk)?, true, &mut ckpt.rng)?;
        let targets = data.targets(chunk, &ckpt.model.target_norm)?;
        let (total, per_task) = ckpt.model.loss(&mut g, &out, &targets)?;
        let report = ckpt.model.report(&g, total, &per_task);
        if !finite_report(&report) {
            return Err(CliError::NonFiniteLoss {
                epoch,
                batch: b,
                detail: serde_json::to_string(&report)?,
            });
        }
        ckpt.model.params.zero_grad();
        g.backward_into(total, &mut ckpt.model.params)?;
        ckpt.adam.step(&mut ckpt.model.params)?;
        if ckpt.config.train.log_batches {
            log(&LogLine::Batch {
                epoch,
                batch: b,
                loss: report.clone(),
            })?;
        }
        reports.push((report, chunk.len() as f64));
    }
    ckpt.epoch = epoch;
    mean_reports(&reports).ok_or_else(|| CliError::Config("empty training split".into()))
}

/// Full run on an in-memory split. `on_checkpoint` sees the state after
/// initialization and after every epoch.
pub fn train_prepared(
    config: &ExperimentConfig,
    data: &Prepared,
    log: &mut dyn FnMut(&LogLine) -> Result<()>,
    on_checkpoint: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    config.validate()?;
    let (train_idx, val_idx) = split_indices(data.len(), config.data.validation_fraction, config.train.seed);
    if train_idx.is_empty() {
        return Err(CliError::Config("training split is empty".into()));
    }
    let mut ckpt = initialize(config, data, &train_idx, &val_idx)?;
    log(&LogLine::Start {
        train_frames: train_idx.len(),
        val_frames: val_idx.len(),
        parameters: ckpt.model.params.numel(),
    })?;
    on_checkpoint(&ckpt)?;
    for _ in 0..config.train.epochs {
        let train = train_epoch(&mut ckpt, data, &train_idx, log)?;
        let val = validate_epoch(&ckpt, data, &val_idx)?;
        log(&LogLine::Epoch {
            epoch: ckpt.epoch,
            train,
            val,
        })?;
        on_checkpoint(&ckpt)?;
    }
    Ok(ckpt)
}

pub fn load_training_data(config: &ExperimentConfig) -> Result<Prepared> {
    let ds = Dataset::load(&config.data.train, config.data.view, config.model.domain == Domain::Rgb)?;
    Prepared::from_dataset(&ds, &config.model)
}

/// Train from `config.data.train`, writing `config.toml`, `train_log.jsonl`
/// and `last.ckpt` (plus `epoch_NNN.ckpt` when all are kept) under `out_dir`.
pub fn train(config: &ExperimentConfig, out_dir: &Path) -> Result<Checkpoint> {
    config.validate()?;
    let data = load_training_data(config)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let cfg_path = out_dir.join("config.toml");
    fs::write(&cfg_path, config.to_toml()?).map_err(|e| CliError::io(&cfg_path, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log = |line: &LogLine| -> Result<()> {
        let mut s = serde_json::to_string(line)?;
        s.push('\n');
        log_file.write_all(s.as_bytes()).map_err(|e| CliError::io(&log_path, e))?;
        log_file.flush().map_err(|e| CliError::io(&log_path, e))
    };
    let keep_all = config.train.keep_all_checkpoints;
    let mut save = |ckpt: &Checkpoint| -> Result<()> {
        if keep_all {
            ckpt.save(&out_dir.join(format!("epoch_{:03}.ckpt", ckpt.epoch)))?;
        }
        ckpt.save(&out_dir.join("last.ckpt"))
    };
    train_prepared(config, &data, &mut log, &mut save)
}
