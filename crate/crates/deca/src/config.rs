//! Experiment configuration: TOML files plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use deca_core::metrics::PartGrouping;
use deca_core::model::{Domain, ModelConfig, TaskSet};
use deca_core::synth::{GenConfig, ViewTag};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    /// Camera the model is trained and validated on.
    pub view: ViewTag,
    /// Fraction of training frames held out for validation, chosen by seed.
    pub validation_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: PathBuf::from("data/train"),
            test: None,
            view: ViewTag::Front,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Write `epoch_NNN.ckpt` for every epoch instead of overwriting `last.ckpt`.
    pub keep_all_checkpoints: bool,
    /// Log one line per batch as well as per epoch.
    pub log_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            keep_all_checkpoints: false,
            log_batches: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// mAP radius in metres.
    pub radius: f64,
    pub grouping: PartGrouping,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            radius: 0.10,
            grouping: PartGrouping::itop15(),
            batch_size: 64,
        }
    }
}

/// Everything a run depends on. Serialized into every checkpoint and report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: GenConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::desk(Domain::Depth, TaskSet::d3()),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth: GenConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train.batch_size == 0 {
            return Err(CliError::Config("train.batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(CliError::Config("data.validation_fraction must be in [0, 1)".into()));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(CliError::Config("train.learning_rate must be positive".into()));
        }
        self.eval.grouping.validate(self.model.joints)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_value(toml::from_str::<toml::Table>(text).map_err(|e| CliError::Config(e.to_string()))?)
    }

    /// Missing keys take their defaults; keys the config does not have are an error.
    fn from_value(table: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(ExperimentConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut base, table.clone());
        let cfg: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.reject_unknown(&table)?;
        Ok(cfg)
    }

    fn reject_unknown(&self, given: &toml::Table) -> Result<()> {
        let full = toml::Table::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(given, &full, "", &mut unknown);
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }

    /// Load a file (or defaults when `path` is `None`), then apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg = Self::from_value(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `a.b.c=value` override to an already-built config.
    pub fn with_override(&self, ov: &str) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        apply_override(&mut table, ov)?;
        let cfg: ExperimentConfig = table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.reject_unknown(&table)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn unknown_keys(given: &toml::Table, full: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = format!("{prefix}{k}");
        match (full.get(k), v) {
            (None, _) => out.push(path),
            (Some(toml::Value::Table(f)), toml::Value::Table(g)) => unknown_keys(g, f, &format!("{path}."), out),
            _ => {}
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {ov:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override {key:?}: {p} is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
