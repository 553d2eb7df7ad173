use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Real;
use crate::{Error, Result};

/// Geometry of a 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::arg("conv2d", "input and weight must be 4-d"));
        }
        if input[1] != weight[1] {
            return Err(Error::shape(
                "conv2d (input channels vs weight channels)",
                &[weight[1]],
                &[input[1]],
            ));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d", "stride must be >= 1"));
        }
        let g = ConvGeom {
            batch: input[0],
            in_ch: input[1],
            height: input[2],
            width: input[3],
            out_ch: weight[0],
            kh: weight[2],
            kw: weight[3],
            stride,
            padding,
        };
        if g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding {
            return Err(Error::arg("conv2d", "kernel larger than padded input"));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h(), self.out_w()]
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Valid output columns `[lo, hi)` for kernel column `kj`.
    #[inline]
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        let hi = if self.width + p > kj {
            ((self.width + p - kj - 1) / s + 1).min(self.out_w())
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Input row for output row `oy` and kernel row `ki`, if not padding.
    #[inline]
    fn src_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let y = (oy * self.stride + ki).checked_sub(self.padding)?;
        (y < self.height).then_some(y)
    }

    /// Visit every `(row r, batch b, output offset, input offset)` run of
    /// contiguous-in-output, strided-in-input copies.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for c in 0..self.in_ch {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let (lo, hi) = self.ox_range(kj);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..oh {
                        if let Some(y) = self.src_row(oy, ki) {
                            let x0 = lo * self.stride + kj - self.padding;
                            f(r, oy * ow + lo, (c * self.height + y) * self.width + x0, hi - lo, 0);
                        }
                    }
                }
            }
        }
    }
}

/// Unfold the batch into one `[patch, B*out_h*out_w]` matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let img = g.in_ch * g.height * g.width;
    let n = g.batch * plane;
    let st = g.stride;
    let mut cols = vec![T::zero(); patch * n];
    g.for_each_run(|r, dst0, src0, len, _| {
        for b in 0..g.batch {
            let dst = &mut cols[r * n + b * plane + dst0..][..len];
            let src = &x[b * img + src0..];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src[i * st];
            }
        }
    });
    cols
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let img = g.in_ch * g.height * g.width;
    let n = g.batch * plane;
    let st = g.stride;
    let mut gx = vec![T::zero(); g.batch * img];
    g.for_each_run(|r, dst0, src0, len, _| {
        for b in 0..g.batch {
            let row = &cols[r * n + b * plane + dst0..][..len];
            let gb = &mut gx[b * img + src0..];
            for (i, &v) in row.iter().enumerate() {
                gb[i * st] = gb[i * st] + v;
            }
        }
    });
    gx
}

/// Column block width for the large gemms.
const BLOCK: usize = 512;

/// Forward pass; returns the output and the unfolded input kept for backward.
pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> (Vec<T>, Vec<T>) {
    let cols = im2col(g, x);
    let (patch, plane, k) = (g.patch(), g.out_plane(), g.out_ch);
    let n = g.batch * plane;
    let mut flat = vec![T::zero(); k * n];
    for n0 in (0..n).step_by(BLOCK) {
        let nb = BLOCK.min(n - n0);
        T::gemm(
            k,
            patch,
            nb,
            T::one(),
            w,
            (patch, 1),
            &cols[n0..],
            (n, 1),
            T::zero(),
            &mut flat[n0..],
            (n, 1),
        );
    }
    let mut out = vec![T::zero(); g.batch * k * plane];
    for kk in 0..k {
        let bk = bias.map_or(T::zero(), |b| b[kk]);
        for b in 0..g.batch {
            let src = &flat[kk * n + b * plane..kk * n + (b + 1) * plane];
            let dst = &mut out[(b * k + kk) * plane..(b * k + kk + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bk;
            }
        }
    }
    (out, cols)
}

/// Gradients with respect to input (when requested), weight and bias.
pub(crate) fn conv2d_backward<T: Real>(g: &ConvGeom, cols: &[T], w: &[T], gout: &[T], need_gx: bool) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (patch, plane, k) = (g.patch(), g.out_plane(), g.out_ch);
    let n = g.batch * plane;
    let mut flat = vec![T::zero(); k * n];
    let mut gb = vec![T::zero(); k];
    for kk in 0..k {
        for b in 0..g.batch {
            let src = &gout[(b * k + kk) * plane..(b * k + kk + 1) * plane];
            flat[kk * n + b * plane..kk * n + (b + 1) * plane].copy_from_slice(src);
            gb[kk] = gb[kk] + src.iter().copied().sum();
        }
    }
    let mut gw = vec![T::zero(); k * patch];
    for n0 in (0..n).step_by(BLOCK) {
        let nb = BLOCK.min(n - n0);
        T::gemm(
            k,
            nb,
            patch,
            T::one(),
            &flat[n0..],
            (n, 1),
            &cols[n0..],
            (1, n),
            T::one(),
            &mut gw,
            (patch, 1),
        );
    }
    let gx = need_gx.then(|| {
        let mut gcols = vec![T::zero(); patch * n];
        for n0 in (0..n).step_by(BLOCK) {
            let nb = BLOCK.min(n - n0);
            T::gemm(
                patch,
                k,
                nb,
                T::one(),
                w,
                (1, patch),
                &flat[n0..],
                (n, 1),
                T::zero(),
                &mut gcols[n0..],
                (n, 1),
            );
        }
        col2im(g, &gcols)
    });
    (gx, gw, gb)
}
