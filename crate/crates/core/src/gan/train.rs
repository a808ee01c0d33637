use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{Discriminator, GanNetConfig, Generator};
use crate::error::{Error, Result};
use crate::ingest::BeatRecord;
use crate::tensor::{Graph, Mode, Tensor};
use crate::train::AdamW;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanTrainConfig {
    pub net: GanNetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub weight_decay: f64,
    /// Discriminator confidence a synthetic beat needs to be kept.
    pub tau: f64,
    /// Fraction of the majority train count each minority class is raised to.
    pub balance_ratio: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            net: GanNetConfig::default(),
            epochs: 200,
            batch_size: 32,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            weight_decay: AdamW::WEIGHT_DECAY,
            tau: 0.5,
            balance_ratio: 1.0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("GAN epochs and batch size must be positive".into()));
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(Error::Config("GAN learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1)", self.tau)));
        }
        if !(self.balance_ratio > 0.0) {
            return Err(Error::Config(format!("balance ratio {} must be positive", self.balance_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanNet {
    Discriminator,
    Generator,
}

/// Loss of one network update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLoss {
    pub step: usize,
    pub net: GanNet,
    pub loss: f64,
}

/// Networks and optimizers of one adversarial run.
pub struct GanTrainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    opt_g: AdamW,
    opt_d: AdamW,
    rng: ChaCha8Rng,
    graph_seed: u64,
}

impl GanTrainer {
    pub fn new(cfg: &GanTrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Generator::new(&cfg.net, &mut rng)?;
        let discriminator = Discriminator::new(&cfg.net, &mut rng)?;
        Ok(Self {
            generator,
            discriminator,
            opt_g: AdamW::new(cfg.lr_generator, cfg.weight_decay),
            opt_d: AdamW::new(cfg.lr_discriminator, cfg.weight_decay),
            rng,
            graph_seed: seed,
        })
    }

    fn next_graph(&mut self, mode: Mode) -> Graph {
        self.graph_seed = self.graph_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        Graph::with_seed(mode, self.graph_seed)
    }

    /// Train-mode generator output for fresh noise, without a tape.
    pub fn fake_batch(&mut self, n: usize) -> Result<Tensor> {
        let z = self.generator.sample_noise(n, &mut self.rng);
        let mut g = self.next_graph(Mode::Train);
        let zv = g.constant(z);
        let y = self.generator.forward(&mut g, zv)?;
        Ok(g.value(y).clone())
    }

    /// One discriminator update on `log D(real) + log(1 - D(fake))`.
    pub fn d_step(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let mut g = self.next_graph(Mode::Train);
        let (nr, nf) = (real.dim(0), fake.dim(0));
        let len = real.dim(1);
        let mut data = real.data().to_vec();
        data.extend_from_slice(fake.data());
        let x = g.constant(Tensor::new(&[nr + nf, len], data)?);
        let logits = self.discriminator.forward(&mut g, x)?;
        let mut targets = vec![1.0f32; nr];
        targets.resize(nr + nf, 0.0);
        let loss = g.bce_with_logits(logits, &targets)?;
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss)?;
        grads.apply_to(&mut self.discriminator.params)?;
        self.opt_d.step(&mut self.discriminator.params)?;
        Ok(value)
    }

    /// One generator update on the non-saturating loss `-log D(G(z))`.
    pub fn g_step(&mut self, n: usize) -> Result<f64> {
        let z = self.generator.sample_noise(n, &mut self.rng);
        let mut g = self.next_graph(Mode::Train);
        let zv = g.constant(z);
        let fake = self.generator.forward(&mut g, zv)?;
        let logits = self.discriminator.forward(&mut g, fake)?;
        let loss = g.bce_with_logits(logits, &vec![1.0; n])?;
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss)?;
        grads.apply_to(&mut self.generator.params)?;
        self.opt_g.step(&mut self.generator.params)?;
        Ok(value)
    }
}

/// A trained generator/discriminator pair with its loss trace.
#[derive(Debug, Clone)]
pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Two entries per step: the discriminator loss, then the generator loss.
    pub history: Vec<GanLoss>,
    pub label: usize,
}

/// Minimum number of real beats needed to train a class GAN.
pub const MIN_REAL_BEATS: usize = 32;

/// Trains one GAN on the beats of a single class.
pub fn gan_train(beats: &[BeatRecord], cfg: &GanTrainConfig, seed: u64) -> Result<GanOutcome> {
    cfg.validate()?;
    let Some(first) = beats.first() else {
        return Err(Error::Config("no beats to train a GAN on".into()));
    };
    let label = first.label;
    if let Some(other) = beats.iter().find(|b| b.label != label) {
        return Err(Error::Config(format!(
            "GAN training takes beats of one class only, got labels {label} and {}",
            other.label
        )));
    }
    if beats.len() < cfg.batch_size.max(MIN_REAL_BEATS) {
        return Err(Error::Config(format!(
            "class {label} has {} beats, fewer than the required {}",
            beats.len(),
            cfg.batch_size.max(MIN_REAL_BEATS)
        )));
    }
    let len = cfg.net.beat_len;
    if let Some(b) = beats.iter().find(|b| b.samples.len() != len) {
        return Err(Error::Shape(format!("beat has {} samples, GAN expects {len}", b.samples.len())));
    }

    let mut trainer = GanTrainer::new(cfg, seed)?;
    let mut order: Vec<usize> = (0..beats.len()).collect();
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut trainer.rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * len);
            for &i in chunk {
                data.extend_from_slice(&beats[i].samples);
            }
            let real = Tensor::new(&[chunk.len(), len], data)?;
            let fake = trainer.fake_batch(chunk.len())?;
            let d_loss = trainer.d_step(&real, &fake)?;
            let g_loss = trainer.g_step(chunk.len())?;
            history.push(GanLoss {
                step,
                net: GanNet::Discriminator,
                loss: d_loss,
            });
            history.push(GanLoss {
                step,
                net: GanNet::Generator,
                loss: g_loss,
            });
            step += 1;
        }
        if epoch % 10 == 0 || epoch == cfg.epochs {
            let recent = &history[history.len().saturating_sub(2)..];
            info!(
                "GAN class {label} epoch {epoch}: D loss {:.4}, G loss {:.4}",
                recent[0].loss, recent[1].loss
            );
        }
    }
    Ok(GanOutcome {
        generator: trainer.generator,
        discriminator: trainer.discriminator,
        history,
        label,
    })
}
