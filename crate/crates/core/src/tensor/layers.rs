//! Parameterized layers that bind named entries of a [`ParamStore`].

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::scalar::Float;
use crate::error::Result;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl<T: Float> Graph<T> {
    /// `x W^T + b` with `{prefix}.weight` and `{prefix}.bias`.
    pub fn dense(&mut self, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(store, &format!("{prefix}.weight"))?;
        let b = self.param(store, &format!("{prefix}.bias"))?;
        self.linear(x, w, Some(b))
    }

    pub fn conv(&mut self, store: &ParamStore<T>, prefix: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let w = self.param(store, &format!("{prefix}.weight"))?;
        let b = self.param(store, &format!("{prefix}.bias"))?;
        self.conv1d(x, w, Some(b), stride, padding)
    }

    /// Batch norm over `{prefix}`; in train mode the new running statistics
    /// are queued for [`Graph::take_buffer_updates`].
    pub fn batch_norm(&mut self, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(store, &format!("{prefix}.gamma"))?;
        let beta = self.param(store, &format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let missing = |n: &str| crate::Error::Usage(format!("unknown buffer {n:?}"));
        let mean = store.buffer(&mean_name).ok_or_else(|| missing(&mean_name))?;
        let var = store.buffer(&var_name).ok_or_else(|| missing(&var_name))?;
        let (y, stats) = self.batch_norm1d(x, gamma, beta, mean, var, BN_MOMENTUM, BN_EPS)?;
        if let Some(stats) = stats {
            self.record_buffer_update(mean_name, stats.mean);
            self.record_buffer_update(var_name, stats.var);
        }
        Ok(y)
    }
}
