use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Float, ParamStore};

/// Adam with weight decay applied directly to the weights rather than
/// folded into the gradient.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;
    pub const WEIGHT_DECAY: f64 = 1e-4;

    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of one parameter.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// `theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)` for
    /// every parameter carrying a gradient. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step<T: Float>(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        for (name, t) in params.params() {
            let grad = t
                .grad()
                .ok_or_else(|| Error::Usage(format!("parameter {name:?} has no gradient")))?;
            if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient {g} in parameter {name:?}")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (name, tensor) in params.params_mut() {
            let grad: Vec<f64> = tensor.grad().unwrap().iter().map(|g| g.to_f64().unwrap()).collect();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (((theta, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                let value = theta.to_f64().unwrap() * decay - update;
                *theta = T::lit(value);
            }
        }
        Ok(())
    }
}
