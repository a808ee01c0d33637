use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Graph, ParamStore, Tensor, Var};

/// Shapes of the generator and discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanNetConfig {
    /// Beat length produced by the generator.
    pub beat_len: usize,
    /// Length of the 1-dimensional noise sequence.
    pub noise_len: usize,
    /// Samples grouped into one recurrent step; both lengths must be
    /// multiples of it.
    pub frame: usize,
    pub lstm_hidden: usize,
    pub dense_units: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl Default for GanNetConfig {
    fn default() -> Self {
        Self {
            beat_len: crate::ingest::DEFAULT_BEAT_LEN,
            noise_len: crate::ingest::DEFAULT_BEAT_LEN,
            frame: 11,
            lstm_hidden: 32,
            dense_units: 128,
            leaky_slope: 0.2,
            dropout: 0.2,
        }
    }
}

impl GanNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame == 0 || !self.noise_len.is_multiple_of(self.frame) || !self.beat_len.is_multiple_of(self.frame) {
            return Err(Error::Config(format!(
                "frame {} must divide noise length {} and beat length {}",
                self.frame, self.noise_len, self.beat_len
            )));
        }
        if self.lstm_hidden == 0 || self.dense_units == 0 || self.beat_len == 0 {
            return Err(Error::Config("GAN layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.leaky_slope >= 0.0) {
            return Err(Error::Config("GAN dropout must lie in [0, 1) and the LeakyReLU slope be >= 0".into()));
        }
        Ok(())
    }
}

/// Frames a `[B, len]` sequence into `[B, len / frame, frame]` and runs a
/// one-layer BiLSTM, returning the concatenated final states `[B, 2H]`.
fn encode(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var, frame: usize) -> Result<Var> {
    let (b, len) = (g.shape(x)[0], g.shape(x)[1]);
    let seq = g.reshape(x, &[b, len / frame, frame])?;
    let out = g.bilstm(p, prefix, seq, 1, 0.0)?;
    g.concat_last(&[out.final_forward, out.final_backward])
}

/// Maps noise sequences to beats in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GanNetConfig,
    pub params: ParamStore,
}

impl Generator {
    pub fn new(config: &GanNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        p.add_bilstm(rng, "gen.rnn", config.frame, config.lstm_hidden, 1)?;
        p.add_dense(rng, "gen.fc1", 2 * config.lstm_hidden, config.dense_units)?;
        p.add_dense(rng, "gen.out", config.dense_units, config.beat_len)?;
        Ok(Self {
            config: config.clone(),
            params: p,
        })
    }

    pub fn sample_noise(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(&[n, self.config.noise_len], |_| rng.sample::<f32, _>(StandardNormal))
    }

    /// `[B, noise_len]` noise to `[B, beat_len]` beats.
    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let c = &self.config;
        let p = &self.params;
        if g.shape(z) .len() != 2 || g.shape(z)[1] != c.noise_len {
            return Err(Error::Shape(format!("noise must be [B, {}], got {:?}", c.noise_len, g.shape(z))));
        }
        let h = encode(g, p, "gen.rnn", z, c.frame)?;
        let h = g.dense(p, "gen.fc1", h)?;
        let h = g.activation(Activation::LeakyRelu(c.leaky_slope), h)?;
        let h = g.dropout(h, c.dropout)?;
        let h = g.dense(p, "gen.out", h)?;
        g.sigmoid(h)
    }

    /// Eval-mode beats for the given noise.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(crate::tensor::Mode::Eval);
        let zv = g.constant(z.clone());
        let y = self.forward(&mut g, zv)?;
        Ok(g.value(y).clone())
    }
}

/// Scores beats as real (probability near 1) or synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: GanNetConfig,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(config: &GanNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        p.add_bilstm(rng, "disc.rnn", config.frame, config.lstm_hidden, 1)?;
        p.add_dense(rng, "disc.fc1", 2 * config.lstm_hidden, config.dense_units)?;
        p.add_dense(rng, "disc.out", config.dense_units, 1)?;
        Ok(Self {
            config: config.clone(),
            params: p,
        })
    }

    /// `[B, beat_len]` beats to `[B, 1]` logits.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let c = &self.config;
        let p = &self.params;
        if g.shape(x).len() != 2 || g.shape(x)[1] != c.beat_len {
            return Err(Error::Shape(format!("beats must be [B, {}], got {:?}", c.beat_len, g.shape(x))));
        }
        let h = encode(g, p, "disc.rnn", x, c.frame)?;
        let h = g.dense(p, "disc.fc1", h)?;
        let h = g.activation(Activation::LeakyRelu(c.leaky_slope), h)?;
        g.dense(p, "disc.out", h)
    }

    /// Probability of being real for each row of `x`.
    pub fn confidence(&self, x: &Tensor) -> Result<Vec<f32>> {
        let mut g = Graph::new(crate::tensor::Mode::Eval);
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, xv)?;
        let p = g.sigmoid(logits)?;
        Ok(g.value(p).data().to_vec())
    }
}
