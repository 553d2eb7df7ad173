use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// `x ↦ scale · rotation · x + translation`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.scale * (0..3).map(|k| self.rotation[i][k] * p[k]).sum::<f64>();
        }
        out
    }

    /// Least-squares similarity carrying `src` onto `dst`, proper rotations only.
    pub fn fit(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<Self> {
        let n = src.len();
        if n != dst.len() {
            return Err(Error::shape("procrustes", &[dst.len(), 3], &[n, 3]));
        }
        if n < 3 {
            return Err(Error::AlignmentFailed);
        }
        let mean = |pts: &[[f64; 3]]| pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n as f64;
        let (mu_s, mu_d) = (mean(src), mean(dst));
        let mut cov = Matrix3::zeros();
        let mut var_s = 0.0;
        for (s, d) in src.iter().zip(dst) {
            let xs = Vector3::from(*s) - mu_s;
            let xd = Vector3::from(*d) - mu_d;
            cov += xd * xs.transpose();
            var_s += xs.norm_squared();
        }
        let svd = cov.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::AlignmentFailed),
        };
        let sv = svd.singular_values;
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-12 * top.max(1e-300)).count();
        if var_s < 1e-18 || top <= 0.0 || rank < 2 {
            return Err(Error::AlignmentFailed);
        }
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = u * d * v_t;
        let trace: f64 = (0..3).map(|i| sv[i] * d[(i, i)]).sum();
        let scale = trace / var_s;
        let t = mu_d - scale * r * mu_s;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[(i, j)];
            }
        }
        Ok(Similarity {
            scale,
            rotation,
            translation: [t.x, t.y, t.z],
        })
    }
}

/// `pred` carried onto `gt` by the optimal similarity transform.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let sim = Similarity::fit(pred, gt)?;
    Ok(pred.iter().map(|&p| sim.apply(p)).collect())
}
