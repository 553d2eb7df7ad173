//! Gaussian-mixture agreement routing between capsule layers.
//!
//! Each higher capsule `j` is a diagonal Gaussian over the flattened votes it
//! receives. Starting from uniform responsibilities, every iteration runs
//!
//! * M-step: `rw = R · a_in`, `m_j = Σ_i rw_ij`, `μ_j = Σ_i rw_ij V_ij / m_j`,
//!   `σ²_j = Σ_i rw_ij (V_ij − μ_j)² / m_j + ε_v`, and the activation
//!   `a_j = logistic(λ_t (β_a[j] − f_j (β_u[j] + Σ_d ln σ²_jd / 2D)))` where
//!   `f_j = m_j / Σ_k m_k` is the share of routed mass and `λ_t = t + 1`.
//! * E-step (all but the last iteration):
//!   `R_ij ∝ a_j · (m_j + α) · N(V_ij | μ_j, σ²_j)`, normalized over `j`.
//!
//! The pseudo-count `α` smooths the mixing weights the way a Dirichlet prior
//! does. The cost is the responsibility-weighted negative log-likelihood per
//! dimension with its constants folded into `β_u`. The `2π` factor of the
//! Gaussian is dropped since it cancels in the normalization.
//!
//! Forward and backward are hand-written over plain slices; the backward pass
//! replays the saved per-iteration state in reverse.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{log_sigmoid, sigmoid, Real, Tensor};
use crate::{Error, Result};

/// Added to the routed mass so empty capsules never divide by zero.
const MASS_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingHyper {
    pub iterations: usize,
    /// Pseudo-count added to each higher capsule's mass in the E-step prior.
    pub alpha: f64,
    /// Floor added to every routed variance.
    pub var_floor: f64,
}

impl Default for RoutingHyper {
    fn default() -> Self {
        RoutingHyper {
            iterations: 3,
            alpha: 1.0,
            var_floor: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingDims {
    /// Independent routing problems (batch items times receptive fields).
    pub n: usize,
    pub lower: usize,
    pub higher: usize,
    pub dim: usize,
}

/// Per-iteration state saved by the forward pass.
pub struct RoutingTape<T> {
    r: Vec<T>,
    m: Vec<T>,
    mu: Vec<T>,
    s: Vec<T>,
    z: Vec<T>,
}

/// Result of routing, for inspection outside a graph.
#[derive(Clone, Debug)]
pub struct RoutingState<T> {
    /// `[N, L, H]` assignment probabilities used by the final M-step.
    pub responsibilities: Tensor<T>,
    /// `[N, H, D]`
    pub means: Tensor<T>,
    /// `[N, H, D]`, each at least the variance floor.
    pub variances: Tensor<T>,
    /// `[N, H]` in `[0, 1]`.
    pub out_activations: Tensor<T>,
}

pub(crate) struct RoutingGrads<T> {
    pub votes: Vec<T>,
    pub acts: Vec<T>,
    pub beta_a: Vec<T>,
    pub beta_u: Vec<T>,
}

fn lambda<T: Real>(t: usize) -> T {
    T::lit((t + 1) as f64)
}

pub(crate) fn forward<T: Real>(
    votes: &[T],
    acts: &[T],
    beta_a: &[T],
    beta_u: &[T],
    dims: RoutingDims,
    hyper: &RoutingHyper,
) -> Result<(Vec<T>, RoutingTape<T>)> {
    let RoutingDims {
        n,
        lower: l,
        higher: h,
        dim: d,
    } = dims;
    let iters = hyper.iterations;
    if iters < 1 {
        return Err(Error::arg("route", "iterations must be >= 1"));
    }
    if h == 0 || l == 0 || d == 0 {
        return Err(Error::arg("route", "empty capsule layer"));
    }
    if !votes.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "route votes" });
    }
    let floor = T::lit(hyper.var_floor);
    let alpha = T::lit(hyper.alpha);
    let meps = T::lit(MASS_EPS);
    let half_d = T::lit(0.5 / d as f64);
    let half = T::lit(0.5);

    let mut tape = RoutingTape {
        r: vec![T::zero(); iters * n * l * h],
        m: vec![T::zero(); iters * n * h],
        mu: vec![T::zero(); iters * n * h * d],
        s: vec![T::zero(); iters * n * h * d],
        z: vec![T::zero(); iters * n * h],
    };
    let mut out = vec![T::zero(); n * h * (d + 1)];
    let mut r = vec![T::zero(); l * h];
    let mut logits = vec![T::zero(); h];
    let mut ln_s = vec![T::zero(); h * d];
    let mut inv_s = vec![T::zero(); h * d];

    for b in 0..n {
        let v = &votes[b * l * h * d..(b + 1) * l * h * d];
        let a = &acts[b * l..(b + 1) * l];
        r.iter_mut().for_each(|x| *x = T::one() / T::lit(h as f64));
        for t in 0..iters {
            let lam: T = lambda(t);
            let ti = t * n + b;
            tape.r[ti * l * h..(ti + 1) * l * h].copy_from_slice(&r);
            let m = &mut tape.m[ti * h..(ti + 1) * h];
            let mu = &mut tape.mu[ti * h * d..(ti + 1) * h * d];
            let s = &mut tape.s[ti * h * d..(ti + 1) * h * d];
            let z = &mut tape.z[ti * h..(ti + 1) * h];

            // M-step
            m.iter_mut().for_each(|x| *x = meps);
            mu.iter_mut().for_each(|x| *x = T::zero());
            s.iter_mut().for_each(|x| *x = T::zero());
            for i in 0..l {
                for j in 0..h {
                    let rw = r[i * h + j] * a[i];
                    m[j] = m[j] + rw;
                    let vij = &v[(i * h + j) * d..][..d];
                    for (acc, &x) in mu[j * d..(j + 1) * d].iter_mut().zip(vij) {
                        *acc = *acc + rw * x;
                    }
                }
            }
            for j in 0..h {
                for x in &mut mu[j * d..(j + 1) * d] {
                    *x = *x / m[j];
                }
            }
            for i in 0..l {
                for j in 0..h {
                    let rw = r[i * h + j] * a[i];
                    let vij = &v[(i * h + j) * d..][..d];
                    for k in 0..d {
                        let e = vij[k] - mu[j * d + k];
                        s[j * d + k] = s[j * d + k] + rw * e * e;
                    }
                }
            }
            let total: T = m.iter().copied().sum();
            for j in 0..h {
                let mut lsum = T::zero();
                for k in 0..d {
                    let sv = s[j * d + k] / m[j] + floor;
                    s[j * d + k] = sv;
                    ln_s[j * d + k] = sv.ln();
                    inv_s[j * d + k] = T::one() / sv;
                    lsum = lsum + ln_s[j * d + k];
                }
                let f = m[j] / total;
                let cost = f * (beta_u[j] + lsum * half_d);
                z[j] = lam * (beta_a[j] - cost);
            }

            if t + 1 == iters {
                let o = &mut out[b * h * (d + 1)..(b + 1) * h * (d + 1)];
                for j in 0..h {
                    o[j * (d + 1)..j * (d + 1) + d].copy_from_slice(&mu[j * d..(j + 1) * d]);
                    o[j * (d + 1) + d] = sigmoid(z[j]);
                }
                break;
            }

            // E-step
            let prior: Vec<T> = (0..h)
                .map(|j| {
                    let lsum: T = ln_s[j * d..(j + 1) * d].iter().copied().sum();
                    log_sigmoid(z[j]) + (m[j] + alpha).ln() - half * lsum
                })
                .collect();
            for i in 0..l {
                let mut best = T::neg_infinity();
                for j in 0..h {
                    let vij = &v[(i * h + j) * d..][..d];
                    let mut q = T::zero();
                    for k in 0..d {
                        let e = vij[k] - mu[j * d + k];
                        q = q + e * e * inv_s[j * d + k];
                    }
                    logits[j] = prior[j] - half * q;
                    best = best.max(logits[j]);
                }
                let mut z_sum = T::zero();
                for lg in logits.iter_mut() {
                    *lg = (*lg - best).exp();
                    z_sum = z_sum + *lg;
                }
                for j in 0..h {
                    r[i * h + j] = logits[j] / z_sum;
                }
            }
        }
    }
    Ok((out, tape))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    votes: &[T],
    acts: &[T],
    _beta_a: &[T],
    beta_u: &[T],
    dims: RoutingDims,
    hyper: &RoutingHyper,
    tape: &RoutingTape<T>,
    gout: &[T],
) -> RoutingGrads<T> {
    let RoutingDims {
        n,
        lower: l,
        higher: h,
        dim: d,
    } = dims;
    let iters = hyper.iterations;
    let floor = T::lit(hyper.var_floor);
    let alpha = T::lit(hyper.alpha);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let half_d = T::lit(0.5 / d as f64);

    let mut g_votes = vec![T::zero(); votes.len()];
    let mut g_acts = vec![T::zero(); acts.len()];
    let mut g_ba = vec![T::zero(); h];
    let mut g_bu = vec![T::zero(); h];

    let mut g_mu = vec![T::zero(); h * d];
    let mut g_s = vec![T::zero(); h * d];
    let mut g_z = vec![T::zero(); h];
    let mut g_m = vec![T::zero(); h];
    let mut g_rw = vec![T::zero(); l * h];
    let mut g_r = vec![T::zero(); l * h];
    let mut g_l = vec![T::zero(); l * h];

    for b in 0..n {
        let v = &votes[b * l * h * d..(b + 1) * l * h * d];
        let a = &acts[b * l..(b + 1) * l];
        let gv = &mut g_votes[b * l * h * d..(b + 1) * l * h * d];
        let go = &gout[b * h * (d + 1)..(b + 1) * h * (d + 1)];

        for t in (0..iters).rev() {
            let lam: T = lambda(t);
            let ti = t * n + b;
            let r = &tape.r[ti * l * h..(ti + 1) * l * h];
            let m = &tape.m[ti * h..(ti + 1) * h];
            let mu = &tape.mu[ti * h * d..(ti + 1) * h * d];
            let s = &tape.s[ti * h * d..(ti + 1) * h * d];
            let z = &tape.z[ti * h..(ti + 1) * h];

            g_mu.iter_mut().for_each(|x| *x = T::zero());
            g_s.iter_mut().for_each(|x| *x = T::zero());
            g_z.iter_mut().for_each(|x| *x = T::zero());
            g_m.iter_mut().for_each(|x| *x = T::zero());

            if t + 1 == iters {
                for j in 0..h {
                    for k in 0..d {
                        g_mu[j * d + k] = go[j * (d + 1) + k];
                    }
                    let aj = sigmoid(z[j]);
                    g_z[j] = go[j * (d + 1) + d] * aj * (T::one() - aj);
                }
            } else {
                // E-step t produced R^{t+1}; g_r holds dL/dR^{t+1}.
                let tn = (t + 1) * n + b;
                let r_next = &tape.r[tn * l * h..(tn + 1) * l * h];
                for i in 0..l {
                    let row = i * h..(i + 1) * h;
                    let dot: T = g_r[row.clone()].iter().zip(&r_next[row.clone()]).map(|(&x, &y)| x * y).sum();
                    for j in row {
                        g_l[j] = r_next[j] * (g_r[j] - dot);
                    }
                }
                for j in 0..h {
                    let mut gsum = T::zero();
                    for i in 0..l {
                        let gl = g_l[i * h + j];
                        if gl == T::zero() {
                            continue;
                        }
                        gsum = gsum + gl;
                        let vij = &v[(i * h + j) * d..][..d];
                        let gvij = &mut gv[(i * h + j) * d..][..d];
                        for k in 0..d {
                            let sk = s[j * d + k];
                            let e = vij[k] - mu[j * d + k];
                            let es = e / sk;
                            g_s[j * d + k] = g_s[j * d + k] + half * gl * es * es;
                            g_mu[j * d + k] = g_mu[j * d + k] + gl * es;
                            gvij[k] = gvij[k] - gl * es;
                        }
                    }
                    g_z[j] = g_z[j] + gsum * (T::one() - sigmoid(z[j]));
                    g_m[j] = g_m[j] + gsum / (m[j] + alpha);
                    for k in 0..d {
                        g_s[j * d + k] = g_s[j * d + k] - half * gsum / s[j * d + k];
                    }
                }
            }

            // M-step t
            let total: T = m.iter().copied().sum();
            let mut g_f = vec![T::zero(); h];
            for j in 0..h {
                g_ba[j] = g_ba[j] + lam * g_z[j];
                let gc = -lam * g_z[j];
                let lsum: T = s[j * d..(j + 1) * d].iter().map(|x| x.ln()).sum();
                let f = m[j] / total;
                g_f[j] = gc * (beta_u[j] + lsum * half_d);
                g_bu[j] = g_bu[j] + gc * f;
                for k in 0..d {
                    g_s[j * d + k] = g_s[j * d + k] + gc * f * half_d / s[j * d + k];
                }
            }
            let sfm: T = g_f.iter().zip(m).map(|(&x, &y)| x * y).sum();
            for j in 0..h {
                g_m[j] = g_m[j] + g_f[j] / total - sfm / (total * total);
            }

            g_rw.iter_mut().for_each(|x| *x = T::zero());
            // variance: s = Σ rw e² / m + floor
            for j in 0..h {
                let inv_m = T::one() / m[j];
                let mut gm_acc = T::zero();
                for k in 0..d {
                    gm_acc = gm_acc + g_s[j * d + k] * (s[j * d + k] - floor);
                }
                g_m[j] = g_m[j] - gm_acc * inv_m;
                for i in 0..l {
                    let rw = r[i * h + j] * a[i];
                    let vij = &v[(i * h + j) * d..][..d];
                    let gvij = &mut gv[(i * h + j) * d..][..d];
                    let mut grw = T::zero();
                    for k in 0..d {
                        let gs = g_s[j * d + k];
                        let e = vij[k] - mu[j * d + k];
                        grw = grw + gs * e * e * inv_m;
                        let ge = gs * two * rw * e * inv_m;
                        gvij[k] = gvij[k] + ge;
                        g_mu[j * d + k] = g_mu[j * d + k] - ge;
                    }
                    g_rw[i * h + j] = g_rw[i * h + j] + grw;
                }
            }
            // mean: μ = Σ rw V / m
            for j in 0..h {
                let inv_m = T::one() / m[j];
                let mut gm_acc = T::zero();
                for k in 0..d {
                    gm_acc = gm_acc + g_mu[j * d + k] * mu[j * d + k];
                }
                g_m[j] = g_m[j] - gm_acc * inv_m;
                for i in 0..l {
                    let rw = r[i * h + j] * a[i];
                    let vij = &v[(i * h + j) * d..][..d];
                    let gvij = &mut gv[(i * h + j) * d..][..d];
                    let mut grw = T::zero();
                    for k in 0..d {
                        let gmu = g_mu[j * d + k];
                        grw = grw + gmu * vij[k] * inv_m;
                        gvij[k] = gvij[k] + gmu * rw * inv_m;
                    }
                    g_rw[i * h + j] = g_rw[i * h + j] + grw + g_m[j];
                }
            }
            // rw = R · a
            for i in 0..l {
                let mut ga = T::zero();
                for j in 0..h {
                    ga = ga + g_rw[i * h + j] * r[i * h + j];
                    g_r[i * h + j] = g_rw[i * h + j] * a[i];
                }
                g_acts[b * l + i] = g_acts[b * l + i] + ga;
            }
        }
    }
    RoutingGrads {
        votes: g_votes,
        acts: g_acts,
        beta_a: g_ba,
        beta_u: g_bu,
    }
}

/// Route `votes[N,L,H,D]` with lower activations `acts[N,L]` outside a graph.
pub fn route<T: Real>(votes: &Tensor<T>, acts: &Tensor<T>, beta_a: &[T], beta_u: &[T], hyper: &RoutingHyper) -> Result<RoutingState<T>> {
    let vs = votes.shape();
    if vs.len() != 4 {
        return Err(Error::arg("route", "votes must be [N, L, H, D]"));
    }
    let dims = RoutingDims {
        n: vs[0],
        lower: vs[1],
        higher: vs[2],
        dim: vs[3],
    };
    if acts.shape() != [dims.n, dims.lower] {
        return Err(Error::shape("route activations", &[dims.n, dims.lower], acts.shape()));
    }
    if beta_a.len() != dims.higher || beta_u.len() != dims.higher {
        return Err(Error::shape("route beta", &[dims.higher], &[beta_a.len()]));
    }
    let (out, tape) = forward(votes.data(), acts.data(), beta_a, beta_u, dims, hyper)?;
    let RoutingDims {
        n,
        lower: l,
        higher: h,
        dim: d,
    } = dims;
    let last = hyper.iterations - 1;
    let mut means = Vec::with_capacity(n * h * d);
    let mut outs = Vec::with_capacity(n * h);
    for row in out.chunks(d + 1) {
        means.extend_from_slice(&row[..d]);
        outs.push(row[d]);
    }
    Ok(RoutingState {
        responsibilities: Tensor::new(&[n, l, h], tape.r[last * n * l * h..].to_vec())?,
        means: Tensor::new(&[n, h, d], means)?,
        variances: Tensor::new(&[n, h, d], tape.s[last * n * h * d..].to_vec())?,
        out_activations: Tensor::new(&[n, h], outs)?,
    })
}
