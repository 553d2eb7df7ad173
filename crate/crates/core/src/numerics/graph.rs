//! Dynamic recording of tensor operations with reverse accumulation.
//!
//! Every op appends a node holding its forward value plus whatever it saved for
//! the backward pass. `backward` walks the nodes in reverse creation order,
//! which is a valid topological order because inputs always precede outputs.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::{gelu_grad_scalar, gelu_scalar, sigmoid, ParamId, ParamStore, Real, Tensor};
use crate::capsules::routing::{self, RoutingDims, RoutingHyper, RoutingTape};
use crate::capsules::vote;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    InstanceNorm {
        x: Var,
        plane: usize,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MaskScale {
        x: Var,
        mask: Vec<T>,
    },
    Reshape(Var),
    Gather {
        x: Var,
        index: Rc<[usize]>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    Scale(Var, T),
    Square(Var),
    Abs(Var),
    Exp(Var),
    Sqrt(Var),
    Sum(Var),
    SumLast {
        x: Var,
        group: usize,
    },
    CapsVote {
        poses: Var,
        weights: Var,
        n: usize,
        lower: usize,
        higher: usize,
    },
    PairMatmul4(Var, Var),
    Routing {
        votes: Var,
        acts: Var,
        beta_a: Var,
        beta_u: Var,
        dims: RoutingDims,
        hyper: RoutingHyper,
        tape: RoutingTape<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recording of one forward computation.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that requires one.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)?
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[v.0], g.clone()).unwrap())
    }

    /// Gradient, or zeros when the node does not influence the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free leaf that receives a gradient (used by gradient checks).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a stored parameter as a gradient-receiving leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.value(id).clone());
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&a| f(a)).collect()).unwrap();
        self.push(out, op, &[x])
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    /// Cross-correlation of `[B,C,H,W]` with `[K,C,kh,kw]`, optional bias `[K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.out_ch] {
                return Err(Error::shape("conv2d bias", &[geom.out_ch], self.shape(b)));
            }
        }
        let bias = b.map(|b| self.value(b).data());
        let (out, cols) = conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), bias);
        let out = Tensor::new(&geom.out_shape(), out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, cols }, &inputs))
    }

    /// Per-plane normalization of `[B,C,H,W]`, no affine parameters.
    pub fn instance_norm2d(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::arg("instance_norm2d", "input must be 4-d"));
        }
        let plane = shape[2] * shape[3];
        if plane == 0 {
            return Err(Error::arg("instance_norm2d", "H*W must be >= 1"));
        }
        let eps = T::lit(eps);
        let pn = T::lit(plane as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(xv.len() / plane);
        for (src, dst) in xv.chunks(plane).zip(out.chunks_mut(plane)) {
            let mean = src.iter().copied().sum::<T>() / pn;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / pn;
            let is = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            inv_std.push(is);
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::InstanceNorm { x, plane, inv_std }, &[x]))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu_scalar)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `x[B,N] · w[M,N]ᵀ + b[M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear (input vs weight)", &ws, &xs));
        }
        let (bsz, n, m) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); bsz * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [m] {
                return Err(Error::shape("linear bias", &[m], bv.shape()));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv.data());
            }
        }
        T::gemm(
            bsz,
            n,
            m,
            T::one(),
            self.value(x).data(),
            (n, 1),
            self.value(w).data(),
            (1, n),
            T::one(),
            &mut out,
            (m, 1),
        );
        let out = Tensor::new(&[bsz, m], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg("dropout", alloc::format!("p must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(out, Op::MaskScale { x, mask }, &[x]))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        check_same("mul_const", xv, c)?;
        let data = xv.data().iter().zip(c.data()).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(
            out,
            Op::MaskScale {
                x,
                mask: c.data().to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `out[k] = x[index[k]]` reshaped to `shape`. Indices may repeat.
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape("gather", shape, &[index.len()]));
        }
        if index.iter().any(|&i| i >= xv.numel()) {
            return Err(Error::arg("gather", "index out of range"));
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Gather { x, index }, &[x]))
    }

    /// Reorder axes.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes.len() != shape.len() {
            return Err(Error::arg("permute", "axes must list every dimension"));
        }
        let mut strides = vec![1usize; shape.len()];
        for d in (0..shape.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let n: usize = shape.iter().product();
        let mut index = Vec::with_capacity(n);
        let mut counter = vec![0usize; shape.len()];
        for _ in 0..n {
            index.push(counter.iter().zip(axes).map(|(&c, &a)| c * strides[a]).sum());
            for d in (0..counter.len()).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        self.gather(x, index.into(), &out_shape)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        check_same("add_const", xv, c)?;
        let data = xv.data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.push(out, Op::AddConst(x), &[x]))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::AddConst(x), |a| a + c)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |a| a * a)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |a| a.abs())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |a| a.exp())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |a| a.sqrt())
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).numel().max(1) as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let group = *shape.last().ok_or_else(|| Error::arg("sum_last", "scalar input"))?;
        if group == 0 {
            return Err(Error::arg("sum_last", "empty last axis"));
        }
        let data = self.value(x).data().chunks(group).map(|c| c.iter().copied().sum()).collect();
        let out = Tensor::new(&shape[..shape.len() - 1], data)?;
        Ok(self.push(out, Op::SumLast { x, group }, &[x]))
    }

    /// Capsule votes: `poses[N,L,16]` times shared `weights[L,H,16]` as 4x4
    /// matrices, giving `[N,L,H,16]` with `V[n,i,j] = M[n,i] · W[i,j]`.
    pub fn caps_vote(&mut self, poses: Var, weights: Var) -> Result<Var> {
        let (ps, ws) = (self.shape(poses).to_vec(), self.shape(weights).to_vec());
        if ps.len() != 3 || ps[2] != 16 || ws.len() != 3 || ws[2] != 16 || ws[0] != ps[1] {
            return Err(Error::shape("caps_vote (poses [N,L,16] vs weights [L,H,16])", &ws, &ps));
        }
        let (n, lower, higher) = (ps[0], ps[1], ws[1]);
        let out = vote::vote_forward(self.value(poses).data(), self.value(weights).data(), n, lower, higher);
        let out = Tensor::new(&[n, lower, higher, 16], out)?;
        Ok(self.push(
            out,
            Op::CapsVote {
                poses,
                weights,
                n,
                lower,
                higher,
            },
            &[poses, weights],
        ))
    }

    /// Pairwise 4x4 products `C[p] = A[p] · B[p]` over `[P,16]` operands.
    pub fn pair_matmul4(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("pair_matmul4", av, bv)?;
        if av.shape().len() != 2 || av.shape()[1] != 16 {
            return Err(Error::shape("pair_matmul4", &[av.shape()[0], 16], av.shape()));
        }
        let mut out = vec![T::zero(); av.numel()];
        for ((c, x), y) in out.chunks_mut(16).zip(av.data().chunks(16)).zip(bv.data().chunks(16)) {
            vote::matmul4_acc(x, y, c);
        }
        let out = Tensor::new(av.shape(), out)?;
        Ok(self.push(out, Op::PairMatmul4(a, b), &[a, b]))
    }

    /// Agreement routing of `votes[N,L,H,D]` weighted by `acts[N,L]`.
    /// Output `[N,H,D+1]`: routed means followed by the output activation.
    pub fn routing(&mut self, votes: Var, acts: Var, beta_a: Var, beta_u: Var, hyper: &RoutingHyper) -> Result<Var> {
        let vs = self.shape(votes).to_vec();
        if vs.len() != 4 {
            return Err(Error::arg("route", "votes must be [N, L, H, D]"));
        }
        let dims = RoutingDims {
            n: vs[0],
            lower: vs[1],
            higher: vs[2],
            dim: vs[3],
        };
        if self.shape(acts) != [dims.n, dims.lower] {
            return Err(Error::shape("route activations", &[dims.n, dims.lower], self.shape(acts)));
        }
        for b in [beta_a, beta_u] {
            if self.shape(b) != [dims.higher] {
                return Err(Error::shape("route beta", &[dims.higher], self.shape(b)));
            }
        }
        let (out, tape) = routing::forward(
            self.value(votes).data(),
            self.value(acts).data(),
            self.value(beta_a).data(),
            self.value(beta_u).data(),
            dims,
            hyper,
        )?;
        let out = Tensor::new(&[dims.n, dims.higher, dims.dim + 1], out)?;
        Ok(self.push(
            out,
            Op::Routing {
                votes,
                acts,
                beta_a,
                beta_u,
                dims,
                hyper: hyper.clone(),
                tape,
            },
            &[votes, acts, beta_a, beta_u],
        ))
    }

    /// Reverse accumulation from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Backward, then add every bound parameter's gradient into `store`.
    /// Bound parameters that do not reach the loss get a zero gradient.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Grads<T>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(id) = node.param {
                match &grads.grads[i] {
                    Some(g) => store.accumulate_grad(id, g),
                    None => store.accumulate_grad(id, &vec![T::zero(); node.value.numel()]),
                }
            }
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, b) in existing.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn acc_map(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mapped = g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect();
        self.acc(grads, v, mapped);
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let need_gx = self.nodes[x.0].requires_grad;
                let (gx, gw, gb) = conv2d_backward(geom, cols, self.value(*w).data(), g, need_gx);
                if let Some(gx) = gx {
                    self.acc(grads, *x, gx);
                }
                self.acc(grads, *w, gw);
                if let Some(b) = b {
                    self.acc(grads, *b, gb);
                }
            }
            Op::InstanceNorm { x, plane, inv_std } => {
                let pn = T::lit(*plane as f64);
                let mut gx = vec![T::zero(); g.len()];
                for (p, ((gp, yp), dst)) in g.chunks(*plane).zip(out.chunks(*plane)).zip(gx.chunks_mut(*plane)).enumerate() {
                    let mg = gp.iter().copied().sum::<T>() / pn;
                    let mgy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / pn;
                    for ((d, &gi), &yi) in dst.iter_mut().zip(gp).zip(yp) {
                        *d = inv_std[p] * (gi - mg - yi * mgy);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, g, |i, gi| gi * gelu_grad_scalar(xv[i]));
            }
            Op::Sigmoid(x) => {
                self.acc_map(grads, *x, g, |i, gi| gi * out[i] * (T::one() - out[i]));
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (bsz, n, m) = (xs[0], xs[1], ws[0]);
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); bsz * n];
                    T::gemm(
                        bsz,
                        m,
                        n,
                        T::one(),
                        g,
                        (m, 1),
                        self.value(*w).data(),
                        (n, 1),
                        T::zero(),
                        &mut gx,
                        (n, 1),
                    );
                    self.acc(grads, *x, gx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![T::zero(); m * n];
                    T::gemm(
                        m,
                        bsz,
                        n,
                        T::one(),
                        g,
                        (1, m),
                        self.value(*x).data(),
                        (n, 1),
                        T::zero(),
                        &mut gw,
                        (n, 1),
                    );
                    self.acc(grads, *w, gw);
                }
                if let Some(b) = b {
                    let mut gb = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        for (a, &r) in gb.iter_mut().zip(row) {
                            *a = *a + r;
                        }
                    }
                    self.acc(grads, *b, gb);
                }
            }
            Op::MaskScale { x, mask } => self.acc_map(grads, *x, g, |i, gi| gi * mask[i]),
            Op::Reshape(x) | Op::AddConst(x) => self.acc(grads, *x, g.to_vec()),
            Op::Gather { x, index } => {
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![T::zero(); self.value(*x).numel()];
                    for (&i, &gi) in index.iter().zip(g) {
                        gx[i] = gx[i] + gi;
                    }
                    self.acc(grads, *x, gx);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.to_vec());
                self.acc_map(grads, *b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, g, |i, gi| gi * bv[i]);
                self.acc_map(grads, *b, g, |i, gi| gi * av[i]);
            }
            Op::Scale(x, c) => self.acc_map(grads, *x, g, |_, gi| gi * *c),
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let two = T::lit(2.0);
                self.acc_map(grads, *x, g, |i, gi| gi * two * xv[i]);
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, g, |i, gi| {
                    if xv[i] > T::zero() {
                        gi
                    } else if xv[i] < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Exp(x) => self.acc_map(grads, *x, g, |i, gi| gi * out[i]),
            Op::Sqrt(x) => self.acc_map(grads, *x, g, |i, gi| {
                if out[i] > T::zero() {
                    gi / (T::lit(2.0) * out[i])
                } else {
                    T::zero()
                }
            }),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.acc(grads, *x, vec![g[0]; n]);
            }
            Op::SumLast { x, group } => {
                let n = self.value(*x).numel();
                self.acc(grads, *x, (0..n).map(|i| g[i / group]).collect());
            }
            Op::CapsVote {
                poses,
                weights,
                n,
                lower,
                higher,
            } => {
                let (gp, gw) = vote::vote_backward(self.value(*poses).data(), self.value(*weights).data(), g, *n, *lower, *higher);
                self.acc(grads, *poses, gp);
                self.acc(grads, *weights, gw);
            }
            Op::PairMatmul4(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                for p in 0..av.len() / 16 {
                    let s = p * 16..(p + 1) * 16;
                    vote::matmul4_grads(&av[s.clone()], &bv[s.clone()], &g[s.clone()], &mut ga[s.clone()], &mut gb[s]);
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Routing {
                votes,
                acts,
                beta_a,
                beta_u,
                dims,
                hyper,
                tape,
            } => {
                let rg = routing::backward(
                    self.value(*votes).data(),
                    self.value(*acts).data(),
                    self.value(*beta_a).data(),
                    self.value(*beta_u).data(),
                    *dims,
                    hyper,
                    tape,
                    g,
                );
                self.acc(grads, *votes, rg.votes);
                self.acc(grads, *acts, rg.acts);
                self.acc(grads, *beta_a, rg.beta_a);
                self.acc(grads, *beta_u, rg.beta_u);
            }
        }
    }
}
