//! Named parameter storage shared across forward passes.
//!
//! Parameters live outside any tape. Each forward pass binds the whole set
//! onto a fresh tape with [`Tape::bind`], producing exactly one leaf per
//! parameter; every submodule applied at every viewpoint or iteration
//! references the same leaf, so shared-weight gradients accumulate on it.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight init: U(-s, s) with s = sqrt(6/fan_in), i.e. variance
    /// 2/fan_in. The gain keeps activation scale roughly constant through
    /// the conv/pool stacks; narrower inits shrink the view embeddings to
    /// the point where the binarizer sees pure noise.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        t.fill_uniform((6.0 / fan_in as f64).sqrt(), rng);
        self.add(name, t)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f64) -> ParamId {
        self.add(name, Tensor::full(shape, T::from_f64(v)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_elems(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Replace every value from another set with matching layout.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(crate::error::Error::ShapeMismatch {
                    op: "copy_values_from",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }
}

/// One tape leaf per parameter, in registration order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Scalar> Tape<T> {
    /// Bind every parameter as a `requires_grad` leaf on this tape.
    pub fn bind(&mut self, params: &ParamSet<T>) -> Binding {
        let vars = params
            .values
            .iter()
            .map(|t| self.leaf(t.clone(), true))
            .collect();
        Binding { vars }
    }

    /// Gradient of a parameter after `backward`, zeros if untouched.
    pub fn param_grad(&self, binding: &Binding, id: ParamId, shape: &[usize]) -> Tensor<T> {
        match self.grad(binding.var(id)) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}
