//! Additive attention pooling over time.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::scalar::Float;
use crate::error::{Error, Result};

impl<T: Float> Graph<T> {
    /// `alpha = softmax_t(v^T tanh(W_h h_t + b_h))` and `s = sum_t alpha_t h_t`.
    /// Reads `{prefix}.w_h` `[A, D]`, `{prefix}.b_h` `[A]` and `{prefix}.v` `[1, A]`.
    /// Returns `(s [B, D], alpha [B, T])`.
    pub fn attention_pool(&mut self, store: &ParamStore<T>, prefix: &str, h: Var) -> Result<(Var, Var)> {
        self.check(h)?;
        let &[b, steps, d] = self.shape(h) else {
            return Err(Error::Shape(format!("attention needs [B,T,D], got {:?}", self.shape(h))));
        };
        if steps == 0 {
            return Err(Error::Shape("attention over an empty sequence".into()));
        }
        let w = self.param(store, &format!("{prefix}.w_h"))?;
        let bias = self.param(store, &format!("{prefix}.b_h"))?;
        let v = self.param(store, &format!("{prefix}.v"))?;
        let flat = self.reshape(h, &[b * steps, d])?;
        let u = self.linear(flat, w, Some(bias))?;
        let u = self.tanh(u)?;
        let e = self.linear(u, v, None)?;
        let e = self.reshape(e, &[b, steps])?;
        let alpha = self.softmax(e)?;
        let s = self.weighted_time_sum(alpha, h)?;
        Ok((s, alpha))
    }
}

impl<T: Float> ParamStore<T> {
    /// Parameters for [`Graph::attention_pool`], uniform in `±1/sqrt(fan_in)`.
    pub fn add_attention(&mut self, rng: &mut impl rand::Rng, prefix: &str, dim: usize, att_dim: usize) -> Result<()> {
        let bound = 1.0 / (dim as f64).sqrt();
        self.add_uniform(rng, format!("{prefix}.w_h"), &[att_dim, dim], bound)?;
        self.add_uniform(rng, format!("{prefix}.b_h"), &[att_dim], bound)?;
        self.add_uniform(rng, format!("{prefix}.v"), &[1, att_dim], 1.0 / (att_dim as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::graph::Mode;
    use crate::tensor::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(d: usize, a: usize) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add_attention(&mut ChaCha8Rng::seed_from_u64(3), "att", d, a).unwrap();
        s
    }

    #[test]
    fn identical_steps_give_uniform_weights() {
        let s = store(3, 4);
        let mut g = Graph::<f64>::new(Mode::Eval);
        let row = [0.2, -0.5, 0.9];
        let h = g.constant(Tensor::from_fn(&[1, 4, 3], |i| row[i % 3]));
        let (ctx, alpha) = g.attention_pool(&s, "att", h).unwrap();
        for &a in g.value(alpha).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        for (c, r) in g.value(ctx).data().iter().zip(row) {
            assert!((c - r).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step() {
        let s = store(2, 3);
        let mut g = Graph::<f64>::new(Mode::Eval);
        let h = g.constant(Tensor::new(&[1, 1, 2], vec![0.3, -0.4]).unwrap());
        let (ctx, alpha) = g.attention_pool(&s, "att", h).unwrap();
        assert_eq!(g.value(alpha).data(), &[1.0]);
        assert_eq!(g.value(ctx).data(), &[0.3, -0.4]);
    }

    #[test]
    fn weights_normalized() {
        let s = store(3, 5);
        let mut g = Graph::<f64>::new(Mode::Eval);
        let h = g.constant(Tensor::from_fn(&[3, 7, 3], |i| ((i * 13) % 17) as f64 / 8.0 - 1.0));
        let (_, alpha) = g.attention_pool(&s, "att", h).unwrap();
        for row in g.value(alpha).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
    }
}
