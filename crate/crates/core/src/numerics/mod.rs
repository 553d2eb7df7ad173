//! Dense tensors, a recording graph for reverse-mode gradients, and the
//! layers and optimizer the network is built from.

mod conv;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod real;
mod tensor;

pub use conv::ConvGeom;
pub use gradcheck::{gradient_check, GradCheck, GraphFn};
pub use graph::{Grads, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{xavier_bound, xavier_uniform, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;

/// Tanh approximation of GELU on a scalar.
/// `tanh` through one `exp`, saturating cleanly in both tails.
#[inline]
pub(crate) fn tanh_exp<T: Real>(u: T) -> T {
    let e = (u.abs() * T::lit(2.0)).exp();
    let t = T::one() - T::lit(2.0) / (e + T::one());
    if u < T::zero() {
        -t
    } else {
        t
    }
}

pub fn gelu_scalar<T: Real>(x: T) -> T {
    let c = T::lit(0.797_884_560_802_865_4); // sqrt(2/pi)
    let u = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + tanh_exp(u))
}

pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c = T::lit(0.797_884_560_802_865_4);
    let k = T::lit(0.044715);
    let u = c * (x + k * x * x * x);
    let t = tanh_exp(u);
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(sigmoid(x))`, stable in both tails.
pub fn log_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
