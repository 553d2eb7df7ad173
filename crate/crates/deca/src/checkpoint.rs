//! Binary checkpoints.
//!
//! ```text
//! "DECACKPT"  u32 LE format version  u64 LE header length
//! header JSON (config, epoch, optimizer step, rng state, tensor index, ...)
//! f32 LE tensor data in index order
//! ```

use std::fs;
use std::path::Path;

use deca_core::model::{Model, TargetNorm};
use deca_core::numerics::{Adam, AdamConfig};
use deca_core::{SeededRng, Tensor};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"DECACKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorGroup {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: TensorGroup,
    pub shape: Vec<usize>,
}

/// Position of the training random stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &SeededRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<SeededRng> {
        let mut rng = SeededRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| CliError::Format(format!("bad rng word position {:?}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ExperimentConfig,
    /// Completed epochs; 0 is the initialization.
    pub epoch: usize,
    pub adam_step: u64,
    pub rng: RngState,
    pub target_norm: TargetNorm,
    pub train_frame_ids: Vec<u64>,
    pub val_frame_ids: Vec<u64>,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub rng: SeededRng,
    pub train_frame_ids: Vec<u64>,
    pub val_frame_ids: Vec<u64>,
}

pub fn adam_config(cfg: &ExperimentConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.train.learning_rate,
        beta1: cfg.train.beta1,
        beta2: cfg.train.beta2,
        eps: cfg.train.adam_eps,
        weight_decay: cfg.train.weight_decay,
    }
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let mut tensors = Vec::new();
        for group in [TensorGroup::Param, TensorGroup::AdamM, TensorGroup::AdamV] {
            for (_, p) in self.model.params.iter() {
                tensors.push(TensorEntry {
                    name: p.name.clone(),
                    group,
                    shape: p.value.shape().to_vec(),
                });
            }
        }
        CheckpointHeader {
            format_version: CKPT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            rng: RngState::capture(&self.rng),
            target_norm: self.model.target_norm.clone(),
            train_frame_ids: self.train_frame_ids.clone(),
            val_frame_ids: self.val_frame_ids.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let numel = self.model.params.numel();
        let mut out = Vec::with_capacity(20 + header.len() + 12 * numel);
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let groups: [Vec<&Tensor<f32>>; 3] = [
            self.model.params.iter().map(|(_, p)| &p.value).collect(),
            self.adam.m.iter().collect(),
            self.adam.v.iter().collect(),
        ];
        for group in groups {
            for t in group {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CKPT_MAGIC {
            return Err(CliError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CKPT_VERSION {
            return Err(CliError::Format(format!(
                "checkpoint format version {version} is not supported (expected {CKPT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CliError::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[20..hend])?;
        header.config.validate()?;
        let mut model = Model::<f32>::build(header.config.model.clone(), &mut SeededRng::seed_from_u64(0))?;
        model.target_norm = header.target_norm.clone();
        let mut adam = Adam::new(adam_config(&header.config), &model.params);
        adam.step = header.adam_step;

        let expected = 3 * model.params.len();
        if header.tensors.len() != expected {
            return Err(CliError::Format(format!(
                "checkpoint lists {} tensors, the configured model needs {expected}",
                header.tensors.len()
            )));
        }
        let mut cursor = hend;
        for (k, entry) in header.tensors.iter().enumerate() {
            let idx = k % model.params.len();
            let id = model.params.id(&entry.name)?;
            if id.0 != idx {
                return Err(CliError::Format(format!("tensor {} out of order", entry.name)));
            }
            let n: usize = entry.shape.iter().product();
            let end = cursor + 4 * n;
            if end > bytes.len() {
                return Err(CliError::Format("truncated checkpoint data".into()));
            }
            let data: Vec<f32> = bytes[cursor..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            cursor = end;
            let t = Tensor::new(&entry.shape, data)?;
            let target = match entry.group {
                TensorGroup::Param => &mut model.params.get_mut(id).value,
                TensorGroup::AdamM => &mut adam.m[idx],
                TensorGroup::AdamV => &mut adam.v[idx],
            };
            if target.shape() != t.shape() {
                return Err(CliError::Format(format!(
                    "tensor {}: shape {:?} in file, {:?} in model",
                    entry.name,
                    t.shape(),
                    target.shape()
                )));
            }
            *target = t;
        }
        if cursor != bytes.len() {
            return Err(CliError::Format("trailing bytes after checkpoint data".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            model,
            adam,
            rng: header.rng.restore()?,
            train_frame_ids: header.train_frame_ids,
            val_frame_ids: header.val_frame_ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
