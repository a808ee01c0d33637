//! Named parameter and buffer storage plus the initializers used to fill it.

use std::collections::BTreeMap;

use rand::Rng;

use super::scalar::Float;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Trainable parameters and non-trainable buffers (running statistics),
/// each keyed by a unique dotted name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Float = f32> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name {name:?}")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    /// Mutable access to a buffer; callers must keep its shape.
    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers.get_mut(name)
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("unknown buffer {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "buffer {name:?}: shape {:?} replaced by {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parameters followed by buffers, each in name order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params().chain(self.buffers())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries().all(|(_, t)| t.all_finite())
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.clear_grad();
        }
    }

    /// Applies running-statistic updates recorded by a training graph.
    pub fn apply_buffer_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (name, value) in updates {
            self.set_buffer(&name, value)?;
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        let same = |a: &BTreeMap<String, Tensor<T>>, b: &BTreeMap<String, Tensor<T>>| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
        };
        if !same(&self.params, &other.params) || !same(&self.buffers, &other.buffers) {
            return Err(Error::Shape("parameter sets differ in names or shapes".into()));
        }
        for (k, v) in &other.params {
            self.params.get_mut(k).unwrap().data_mut().copy_from_slice(v.data());
        }
        for (k, v) in &other.buffers {
            self.buffers.get_mut(k).unwrap().data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }

    /// Uniform in `[-bound, bound)`.
    pub fn add_uniform(
        &mut self,
        rng: &mut impl Rng,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
    ) -> Result<()> {
        let t = Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-bound..bound)));
        self.insert_param(name, t)
    }

    /// Dense layer `{prefix}.weight` `[out, in]` and `{prefix}.bias` `[out]`,
    /// both uniform in `±1/sqrt(in)`.
    pub fn add_dense(&mut self, rng: &mut impl Rng, prefix: &str, inputs: usize, outputs: usize) -> Result<()> {
        let bound = 1.0 / (inputs as f64).sqrt();
        self.add_uniform(rng, format!("{prefix}.weight"), &[outputs, inputs], bound)?;
        self.add_uniform(rng, format!("{prefix}.bias"), &[outputs], bound)
    }

    /// Convolution `{prefix}.weight` `[out, in, k]` and `{prefix}.bias`,
    /// uniform in `±1/sqrt(in * k)`.
    pub fn add_conv(
        &mut self,
        rng: &mut impl Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Result<()> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        self.add_uniform(rng, format!("{prefix}.weight"), &[c_out, c_in, kernel], bound)?;
        self.add_uniform(rng, format!("{prefix}.bias"), &[c_out], bound)
    }

    /// Batch-norm scale 1, shift 0, running mean 0 and running variance 1.
    pub fn add_batch_norm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.insert_param(format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()))?;
        self.insert_param(format!("{prefix}.beta"), Tensor::zeros(&[channels]))?;
        self.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?;
        self.insert_buffer(format!("{prefix}.running_var"), Tensor::full(&[channels], T::one()))
    }

    /// One LSTM direction with gate rows ordered input, forget, cell, output.
    /// Everything is uniform in `±1/sqrt(hidden)` except the forget bias, which is 1.
    pub fn add_lstm(&mut self, rng: &mut impl Rng, prefix: &str, inputs: usize, hidden: usize) -> Result<()> {
        let bound = 1.0 / (hidden as f64).sqrt();
        self.add_uniform(rng, format!("{prefix}.w_ih"), &[4 * hidden, inputs], bound)?;
        self.add_uniform(rng, format!("{prefix}.w_hh"), &[4 * hidden, hidden], bound)?;
        let mut bias = Tensor::from_fn(&[4 * hidden], |_| T::lit(rng.gen_range(-bound..bound)));
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        self.insert_param(format!("{prefix}.bias"), bias)
    }
}
