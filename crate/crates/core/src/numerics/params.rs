use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub tensor: Tensor<F>,
    pub grad: Tensor<F>,
}

/// Initialization scheme for a new parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    /// Glorot uniform for a `[fan_in, fan_out]` matrix.
    Xavier,
    /// Approximate normal with the given standard deviation (Irwin-Hall of 4 uniforms).
    Normal(f64),
}

/// Owning, ordered collection of parameters. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
}

/// Per-parameter gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub values: Vec<Vec<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<ParamId> {
        let numel: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::zero(); numel],
            Init::Ones => vec![F::one(); numel],
            Init::Uniform(a) => (0..numel).map(|_| F::c(rng.gen_range(-a..=a))).collect(),
            Init::Xavier => {
                let (fan_in, fan_out) = match shape {
                    [a, b] => (*a, *b),
                    [a] => (*a, *a),
                    _ => (1, 1),
                };
                let a = libm_sqrt(6.0 / (fan_in + fan_out) as f64);
                (0..numel).map(|_| F::c(rng.gen_range(-a..=a))).collect()
            }
            Init::Normal(std) => (0..numel)
                .map(|_| {
                    // sum of 4 U(0,1) has variance 1/3
                    let s: f64 = (0..4).map(|_| rng.gen::<f64>()).sum::<f64>() - 2.0;
                    F::c(s * std * libm_sqrt(3.0))
                })
                .collect(),
        };
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Inserts an already materialized tensor.
    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(tensor.shape());
        self.params.push(Parameter { name: String::from(name), tensor, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn zero_gradients(&self) -> Gradients<F> {
        Gradients { values: self.params.iter().map(|p| vec![F::zero(); p.tensor.numel()]).collect() }
    }

    /// Adds `grads` into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (p, g) in self.params.iter_mut().zip(&grads.values) {
            for (dst, &src) in p.grad.data_mut().iter_mut().zip(g) {
                *dst += src;
            }
        }
    }
}

impl<F: Real> Gradients<F> {
    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for v in &mut self.values {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.values[id.0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|x| x.is_finite())
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}
