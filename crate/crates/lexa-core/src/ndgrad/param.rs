//! Named learnable tensors and their binding onto a tape.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::real::Real;
use super::tape::{Gradients, Tape, Var};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: String, tensor: Tensor<T>) -> Self {
        let n = tensor.numel();
        Self {
            name,
            tensor: tensor.with_grad(),
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
}

/// Parameters of one independently optimized component, all sharing a name
/// prefix such as `wm/`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T = f32> {
    prefix: String,
    params: Vec<Parameter<T>>,
}

/// Tape handles for every parameter of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new(prefix: &str) -> Self {
        Self {
            prefix: prefix.into(),
            params: Vec::new(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let n = numel(shape);
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Glorot { fan_in, fan_out } => {
                let limit = sqrt_f64(6.0 / (fan_in + fan_out).max(1) as f64);
                (0..n)
                    .map(|_| T::from_f64(rng.random_range(-limit..limit)))
                    .collect()
            }
        };
        let tensor = Tensor::new(shape, data).expect("init matches shape");
        self.params
            .push(Parameter::new(format!("{}{}", self.prefix, name), tensor));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> core::slice::IterMut<'_, Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Records every parameter on `tape`. Trainable bindings receive
    /// gradients; frozen ones act as constants that still pass gradients
    /// through to their other operands.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(&p.tensor)
                } else {
                    tape.input(&p.tensor)
                }
            })
            .collect();
        Binding { vars }
    }

    /// Binds parameters as slices of one flat vector in declaration order.
    pub fn bind_flat(&self, tape: &mut Tape<T>, flat: Var) -> Result<Binding> {
        let mut offset = 0;
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let n = p.tensor.numel();
            let s = tape.slice(flat, 0, offset, n)?;
            vars.push(tape.reshape(s, p.tensor.shape())?);
            offset += n;
        }
        Ok(Binding { vars })
    }

    pub fn flatten(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .params
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect();
        let n = data.len();
        Tensor::new(&[n], data).expect("flat length")
    }

    /// Adds the gradients recorded for `binding` into each parameter.
    pub fn accumulate(&mut self, grads: &Gradients<T>, binding: &Binding) {
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if let (Some(src), Some(dst)) = (grads.get(v), p.tensor.grad_mut()) {
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum();
        sqrt_f64(sq)
    }

    /// Overwrites parameter values (not optimizer state) with `other`'s.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Invalid(format!(
                "cannot copy {} parameters into a set of {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "copy_values_from",
                    lhs: dst.tensor.shape().to_vec(),
                    rhs: src.tensor.shape().to_vec(),
                });
            }
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }

    /// Copy of the values under another prefix, with fresh optimizer state.
    pub fn renamed(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            prefix: prefix.into(),
            params: self
                .params
                .iter()
                .map(|p| {
                    let local = p.name.strip_prefix(self.prefix.as_str()).unwrap_or(&p.name);
                    Parameter::new(format!("{prefix}{local}"), p.tensor.clone())
                })
                .collect(),
        }
    }

    pub fn values_equal(&self, other: &ParamSet<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.tensor.data() == b.tensor.data())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            prefix: self.prefix.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    adam_m: p.adam_m.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    adam_v: p.adam_v.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    step_count: p.step_count,
                })
                .collect(),
        }
    }
}

fn sqrt_f64(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}
