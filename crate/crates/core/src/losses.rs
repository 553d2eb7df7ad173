//! Per-task losses and the self-balancing aggregate
//! `L = Σ_τ (s_τ + exp(−s_τ) · L_τ)` with trainable `s_τ`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::Task;
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Form of the inverse-graphics loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseGraphicsMode {
    /// Mean over pairs of `‖Ŵ·W − I‖_F`.
    #[default]
    IdentityDeviation,
    /// Mean over pairs of `‖Ŵ·W‖_F`. Minimized by `Ŵ = 0`.
    Literal,
}

/// Normalization of the masked L1 depth loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthLossNorm {
    /// Both sums also averaged over the pixels of a sample.
    #[default]
    PerPixel,
    /// Divide by `2·BS` only.
    PaperNorm,
}

/// Snapshot of one loss evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_task: BTreeMap<Task, f64>,
    pub total: f64,
    pub weights: BTreeMap<Task, f64>,
}

impl LossReport {
    /// Aggregate recomputed from the per-task values and weights.
    pub fn recompute_total(&self) -> f64 {
        self.per_task
            .iter()
            .map(|(t, l)| {
                let s = self.weights[t];
                s + libm::exp(-s) * l
            })
            .sum()
    }
}

fn batch_of<T: Real>(g: &Graph<T>, v: Var) -> Result<usize> {
    match g.shape(v).first() {
        Some(&b) if b > 0 => Ok(b),
        _ => Err(Error::arg("loss", "prediction needs a non-empty leading batch axis")),
    }
}

/// `(1/BS) Σ_batch Σ (y − ŷ)²`, summed over every non-batch axis.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: &Tensor<T>) -> Result<Var> {
    if g.shape(pred) != gt.shape() {
        return Err(Error::shape("mse_loss", gt.shape(), g.shape(pred)));
    }
    let bs = batch_of(g, pred)?;
    let gt = g.input(gt.clone());
    let diff = g.sub(pred, gt)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    Ok(g.scale(s, T::one() / T::lit(bs as f64)))
}

/// `Σ_batch [mask·|y − ŷ| + |y − ŷ|] / (2·BS)` with `mask = gt > threshold`.
pub fn masked_l1_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: &Tensor<T>, depth_threshold: f64, norm: DepthLossNorm) -> Result<Var> {
    if g.shape(pred) != gt.shape() {
        return Err(Error::shape("masked_l1_loss", gt.shape(), g.shape(pred)));
    }
    let bs = batch_of(g, pred)?;
    let thr = T::lit(depth_threshold);
    let mask = Tensor::new(
        gt.shape(),
        gt.data().iter().map(|&v| if v > thr { T::one() } else { T::zero() }).collect(),
    )?;
    let gtv = g.input(gt.clone());
    let diff = g.sub(pred, gtv)?;
    let abs = g.abs(diff);
    let masked = g.mul_const(abs, &mask)?;
    let masked_sum = g.sum(masked);
    let plain_sum = g.sum(abs);
    let both = g.add(masked_sum, plain_sum)?;
    let pixels = gt.numel() / bs;
    let denom = match norm {
        DepthLossNorm::PerPixel => 2.0 * bs as f64 * pixels as f64,
        DepthLossNorm::PaperNorm => 2.0 * bs as f64,
    };
    Ok(g.scale(both, T::lit(1.0 / denom)))
}

/// Mean over transformation/inverse pairs of the Frobenius norm of `Ŵ·W − I`
/// (or `Ŵ·W` in literal mode).
pub fn inverse_graphics_loss<T: Real>(g: &mut Graph<T>, w: Var, w_inv: Var, mode: InverseGraphicsMode) -> Result<Var> {
    if g.shape(w) != g.shape(w_inv) {
        return Err(Error::shape("inverse_graphics_loss", g.shape(w), g.shape(w_inv)));
    }
    let n = g.value(w).numel();
    if n == 0 || !n.is_multiple_of(16) {
        return Err(Error::arg("inverse_graphics_loss", "weights must hold 4x4 matrices"));
    }
    let pairs = n / 16;
    let a = g.reshape(w_inv, &[pairs, 16])?;
    let b = g.reshape(w, &[pairs, 16])?;
    let mut prod = g.pair_matmul4(a, b)?;
    if mode == InverseGraphicsMode::IdentityDeviation {
        let neg_eye = Tensor::from_fn(&[pairs, 16], |i| {
            let e = i % 16;
            if e / 4 == e % 4 {
                -T::one()
            } else {
                T::zero()
            }
        });
        prod = g.add_const(prod, &neg_eye)?;
    }
    let sq = g.square(prod);
    let per_pair = g.sum_last(sq)?;
    let norms = g.sqrt(per_pair);
    Ok(g.mean(norms))
}

/// `Σ_τ (s_τ + exp(−s_τ) L_τ)` over the given task losses.
pub fn total_loss<T: Real>(g: &mut Graph<T>, per_task: &[(Task, Var)], weights: &[(Task, Var)]) -> Result<Var> {
    if per_task.is_empty() {
        return Err(Error::InvalidTasks {
            reason: "no task losses".into(),
        });
    }
    let mut terms = Vec::with_capacity(per_task.len());
    for &(task, l) in per_task {
        let s = weights
            .iter()
            .find(|(t, _)| *t == task)
            .map(|&(_, s)| s)
            .ok_or_else(|| Error::InvalidTasks {
                reason: alloc::format!("no balancing weight for task {}", task.tag()),
            })?;
        let neg = g.scale(s, -T::one());
        let e = g.exp(neg);
        let weighted = g.mul(e, l)?;
        terms.push(g.add(s, weighted)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}
