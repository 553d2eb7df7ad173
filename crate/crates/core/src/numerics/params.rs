use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::arg("param_store", alloc::format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter { name: name.to_string() })
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[T]) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g) {
                    *a = *a + *b;
                }
            }
            None => {
                p.grad = Some(Tensor::new(p.value.shape(), g.to_vec()).expect("grad shape"));
            }
        }
    }
}

/// `sqrt(6 / (fan_in + fan_out))` with torch's fan convention: for `[out, in, k...]`
/// each fan is multiplied by the receptive field size.
pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    if shape.len() < 2 {
        return Err(Error::arg("xavier_uniform", "weight needs at least 2 dimensions"));
    }
    let receptive: usize = shape[2..].iter().product();
    let fan_out = shape[0] * receptive;
    let fan_in = shape[1] * receptive;
    Ok(libm::sqrt(6.0 / (fan_in + fan_out) as f64))
}

/// Fill `weight` uniformly in `±xavier_bound`.
pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(weight: &mut Tensor<T>, rng: &mut R) -> Result<()> {
    let bound = xavier_bound(weight.shape())?;
    for v in weight.data_mut() {
        *v = T::lit(rng.gen_range(-bound..=bound));
    }
    Ok(())
}
