use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Named parameter tensors in a fixed order. Gradient buffers and optimizer
/// state are plain `Vec<Tensor>`s aligned with this order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrites the tensor called `name`; shapes must match.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("no parameter named '{name}'")))?;
        if self.tensors[idx].shape() != value.shape() {
            return Err(Error::Config(format!(
                "layer {name}: shape {:?} does not match {:?}",
                value.shape(),
                self.tensors[idx].shape()
            )));
        }
        self.tensors[idx] = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Sequential initializer: Glorot-uniform weights, zero biases, drawn from a
/// single seeded stream in declaration order.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<T: Real>(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
        self.uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// Uniform in `+-sqrt(gain / fan_in)`.
    pub fn fan_in<T: Real>(&mut self, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
        self.uniform(shape, (gain / fan_in as f64).sqrt())
    }

    fn uniform<T: Real>(&mut self, shape: &[usize], limit: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.random_range(-limit..limit)))
            .collect();
        Tensor::new(shape, data).expect("init shape")
    }
}
