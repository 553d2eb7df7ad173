//! Central finite differences against the recorded backward pass.

use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::Result;

/// Worst input of one check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or the absolute
    /// difference when both norms are below `1e-10`.
    pub rel_error: f64,
    pub input: usize,
}

/// Builds a graph output from the input variables.
pub type GraphFn = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn scalar_of(build: &GraphFn, inputs: &[Tensor<f64>], proj: &mut Option<Tensor<f64>>, seed: u64) -> Result<(Graph<f64>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &leaves)?;
    let loss = if g.value(out).numel() == 1 {
        out
    } else {
        let p = proj.get_or_insert_with(|| {
            // Fixed pseudo-random projection so every output element matters.
            let mut s = seed | 1;
            Tensor::from_fn(g.shape(out), |_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
        });
        let y = g.mul_const(out, p)?;
        g.sum(y)
    };
    Ok((g, leaves, loss))
}

/// Compare the gradient of `build` (projected to a scalar when it is not one)
/// with central differences of step `h` for every input element.
pub fn gradient_check(inputs: &[Tensor<f64>], build: &GraphFn, h: f64, seed: u64) -> Result<GradCheck> {
    let mut proj = None;
    let (g, leaves, loss) = scalar_of(build, inputs, &mut proj, seed)?;
    let grads = g.backward(loss)?;
    let mut worst = GradCheck { rel_error: 0.0, input: 0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, &leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let mut numeric = Vec::with_capacity(analytic.numel());
        for e in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[e];
            work[k].data_mut()[e] = x0 + h;
            let (gp, _, lp) = scalar_of(build, &work, &mut proj, seed)?;
            let fp = gp.value(lp).item();
            work[k].data_mut()[e] = x0 - h;
            let (gm, _, lm) = scalar_of(build, &work, &mut proj, seed)?;
            let fm = gm.value(lm).item();
            work[k].data_mut()[e] = x0;
            numeric.push((fp - fm) / (2.0 * h));
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum::<f64>());
        let diff = norm(&mut analytic.data().iter().zip(&numeric).map(|(a, n)| a - n));
        let na = norm(&mut analytic.data().iter().copied());
        let nn = norm(&mut numeric.iter().copied());
        let scale = na.max(nn);
        let rel = if scale < 1e-10 { diff } else { diff / scale };
        if rel > worst.rel_error || rel.is_nan() {
            worst = GradCheck { rel_error: rel, input: k };
        }
    }
    Ok(worst)
}
