//! 4x4 matrix kernels for capsule votes.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::Real;

/// `c += a · b` for row-major 4x4 matrices.
#[inline]
pub(crate) fn matmul4_acc<T: Real>(a: &[T], b: &[T], c: &mut [T]) {
    for r in 0..4 {
        for k in 0..4 {
            let ark = a[r * 4 + k];
            for col in 0..4 {
                c[r * 4 + col] = c[r * 4 + col] + ark * b[k * 4 + col];
            }
        }
    }
}

/// Given `gc = dL/d(a·b)`: `ga += gc · bᵀ`, `gb += aᵀ · gc`.
#[inline]
pub(crate) fn matmul4_grads<T: Real>(a: &[T], b: &[T], gc: &[T], ga: &mut [T], gb: &mut [T]) {
    for r in 0..4 {
        for k in 0..4 {
            let mut acc = T::zero();
            for col in 0..4 {
                acc = acc + gc[r * 4 + col] * b[k * 4 + col];
            }
            ga[r * 4 + k] = ga[r * 4 + k] + acc;
        }
    }
    for k in 0..4 {
        for col in 0..4 {
            let mut acc = T::zero();
            for r in 0..4 {
                acc = acc + a[r * 4 + k] * gc[r * 4 + col];
            }
            gb[k * 4 + col] = gb[k * 4 + col] + acc;
        }
    }
}

pub(crate) fn vote_forward<T: Real>(poses: &[T], w: &[T], n: usize, lower: usize, higher: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * lower * higher * 16];
    for b in 0..n {
        for i in 0..lower {
            let m = &poses[(b * lower + i) * 16..][..16];
            for j in 0..higher {
                let wij = &w[(i * higher + j) * 16..][..16];
                let o = &mut out[((b * lower + i) * higher + j) * 16..][..16];
                matmul4_acc(m, wij, o);
            }
        }
    }
    out
}

pub(crate) fn vote_backward<T: Real>(poses: &[T], w: &[T], g: &[T], n: usize, lower: usize, higher: usize) -> (Vec<T>, Vec<T>) {
    let mut gp = vec![T::zero(); poses.len()];
    let mut gw = vec![T::zero(); w.len()];
    for b in 0..n {
        for i in 0..lower {
            let pi = (b * lower + i) * 16;
            for j in 0..higher {
                let wi = (i * higher + j) * 16;
                let gi = ((b * lower + i) * higher + j) * 16;
                let (m, wij, gv) = (&poses[pi..pi + 16], &w[wi..wi + 16], &g[gi..gi + 16]);
                let mut ga = [T::zero(); 16];
                let mut gb = [T::zero(); 16];
                matmul4_grads(m, wij, gv, &mut ga, &mut gb);
                for (d, s) in gp[pi..pi + 16].iter_mut().zip(ga) {
                    *d = *d + s;
                }
                for (d, s) in gw[wi..wi + 16].iter_mut().zip(gb) {
                    *d = *d + s;
                }
            }
        }
    }
    (gp, gw)
}
