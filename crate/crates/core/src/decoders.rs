//! Independent fully connected heads from the entity space to task outputs.
//! Heads share no parameters.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Task;
use crate::numerics::{Graph, Real, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Widths of the hidden layers; the head has `hidden.len() + 1` blocks.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// GELU on every output, including 3D and 2D heads.
    pub strict_alg2: bool,
    /// Side of the square depth-map output.
    pub depth_side: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: alloc::vec![512, 512],
            dropout: 0.5,
            strict_alg2: false,
            depth_side: 64,
        }
    }
}

/// Output squashing of a head's final layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Affine,
    Logistic,
    Gelu,
}

impl DecoderConfig {
    pub fn output_activation(&self, task: Task) -> OutputActivation {
        if self.strict_alg2 {
            return OutputActivation::Gelu;
        }
        match task {
            Task::Pose3d => OutputActivation::Affine,
            Task::Pose2d => OutputActivation::Logistic,
            _ => OutputActivation::Gelu,
        }
    }

    pub fn output_size(&self, task: Task, joints: usize) -> Result<usize> {
        match task {
            Task::Pose3d => Ok(3 * joints),
            Task::Pose2d => Ok(2 * joints),
            Task::DepthMap => Ok(self.depth_side * self.depth_side),
            Task::InverseGraphics => Err(Error::InvalidTasks {
                reason: "the inverse-graphics task has no decoder".into(),
            }),
        }
    }
}

/// Weight and bias of each linear block, first to last.
pub struct HeadVars {
    pub task: Task,
    pub layers: Vec<(Var, Var)>,
}

/// `Dropout → Linear → activation` per block. Hidden activations are GELU.
pub fn decode_head<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    entities: Var,
    head: &HeadVars,
    config: &DecoderConfig,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let es = g.shape(entities).to_vec();
    if es.len() != 3 {
        return Err(Error::arg("decode", "entities must be [B, J, 16]"));
    }
    let mut x = g.reshape(entities, &[es[0], es[1] * es[2]])?;
    let last = head.layers.len() - 1;
    for (k, &(w, b)) in head.layers.iter().enumerate() {
        x = g.dropout(x, config.dropout, training, rng)?;
        x = g.linear(x, w, Some(b))?;
        x = if k < last {
            g.gelu(x)
        } else {
            match config.output_activation(head.task) {
                OutputActivation::Affine => x,
                OutputActivation::Logistic => g.sigmoid(x),
                OutputActivation::Gelu => g.gelu(x),
            }
        };
    }
    Ok(x)
}
