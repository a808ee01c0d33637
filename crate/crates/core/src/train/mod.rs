//! Training recipe: focal loss on softmax probabilities, AdamW, plateau
//! learning-rate control and early stopping on validation loss.

mod history;
mod optim;
mod schedule;

pub use history::{EpochRecord, TrainingHistory};
pub use optim::AdamW;
pub use schedule::PlateauScheduler;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BeatDataset, SplitTag};
use crate::models::{argmax, Architecture, Model};
use crate::tensor::{focal_term, softmax_rows, Graph, Mode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalLossConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, gamma: 2.0 }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal loss needs alpha > 0 and gamma >= 0, got {} and {}",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }
}

/// Mean focal loss of `[B, C]` probability rows against class ids.
pub fn focal_loss(probs: &Tensor<f64>, targets: &[usize], cfg: &FocalLossConfig) -> Result<f64> {
    let &[b, c] = probs.shape() else {
        return Err(Error::Shape(format!("focal_loss needs [B,C], got {:?}", probs.shape())));
    };
    if targets.len() != b || b == 0 {
        return Err(Error::Shape(format!("{} targets for a batch of {b}", targets.len())));
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::Usage(format!("target class {t} outside 0..{c}")));
        }
        total += focal_term(probs.data()[i * c + t], cfg.alpha, cfg.gamma);
    }
    Ok(total / b as f64)
}

/// One training run's settings; `recipe` gives the per-architecture defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub focal: FocalLossConfig,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub min_lr: f64,
}

impl TrainConfig {
    pub fn recipe(architecture: Architecture) -> Self {
        let (batch_size, lr) = match architecture {
            Architecture::Cnn => (128, 1.15e-3),
            Architecture::CnnLstm | Architecture::CnnLstmAttn => (96, 1e-3),
            Architecture::Resnet1d => (96, 1.22e-3),
        };
        Self {
            architecture,
            batch_size,
            lr,
            epochs: 50,
            patience: 8,
            seed: 0,
            weight_decay: AdamW::WEIGHT_DECAY,
            focal: FocalLossConfig::default(),
            scheduler_factor: PlateauScheduler::FACTOR,
            scheduler_patience: PlateauScheduler::PATIENCE,
            min_lr: PlateauScheduler::MIN_LR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 || self.scheduler_patience == 0 {
            return Err(Error::Config("batch size, epochs and patience values must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.min_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rates must be positive and weight decay nonnegative".into()));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(Error::Config(format!("scheduler factor {} outside (0, 1)", self.scheduler_factor)));
        }
        Ok(())
    }
}

/// A trained model with its per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Model,
    pub history: TrainingHistory,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Learning rate in effect during each epoch.
    pub lr_trace: Vec<f64>,
}

/// Stacks the selected beats into a `[n, 1, L]` tensor and their labels.
pub fn batch_tensor(ds: &BeatDataset, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let len = ds.beat_len;
    let mut data = Vec::with_capacity(indices.len() * len);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let b = &ds.beats[i];
        if b.samples.len() != len {
            return Err(Error::Shape(format!("beat {i} has {} samples, expected {len}", b.samples.len())));
        }
        data.extend_from_slice(&b.samples);
        labels.push(b.label);
    }
    Ok((Tensor::new(&[indices.len(), 1, len], data)?, labels))
}

/// Eval-mode logits of the selected beats, `[n, n_classes]`.
pub fn predict_logits(model: &Model, ds: &BeatDataset, indices: &[usize], chunk: usize) -> Result<Tensor<f32>> {
    let (x, _) = batch_tensor(ds, indices)?;
    model.predict(&x, chunk)
}

/// Mean focal loss and accuracy of `logits` against `labels`.
pub fn loss_and_accuracy(logits: &Tensor<f32>, labels: &[usize], focal: &FocalLossConfig) -> Result<(f64, f64)> {
    let probs = softmax_rows(&logits.cast::<f64>());
    let loss = focal_loss(&probs, labels, focal)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Trains on the beats tagged `train`, monitoring those tagged `val`.
///
/// Each epoch shuffles the training indices from one seeded stream, runs
/// mini-batch AdamW steps and evaluates validation loss, which drives both
/// the plateau scheduler and early stopping. The returned model holds the
/// best-validation-loss parameters.
pub fn train(mut model: Model, ds: &BeatDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_idx = ds.indices_with(SplitTag::Train);
    let val_idx = ds.indices_with(SplitTag::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and val splits (got {} and {})",
            train_idx.len(),
            val_idx.len()
        )));
    }
    if ds.beat_len != model.descriptor.input_len {
        return Err(Error::Shape(format!(
            "beats have {} samples but the model expects {}",
            ds.beat_len, model.descriptor.input_len
        )));
    }
    let (val_x, val_y) = batch_tensor(ds, &val_idx)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut sched = PlateauScheduler::with(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience, cfg.min_lr);
    let mut history = TrainingHistory::default();
    let mut lr_trace = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order = train_idx.clone();
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        opt.lr = sched.lr;
        lr_trace.push(sched.lr);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch_tensor(ds, chunk)?;
            let mut g = Graph::with_seed(Mode::Train, cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            step += 1;
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv)?;
            let probs = g.softmax(out.logits)?;
            let loss = g.focal_loss(probs, &y, cfg.focal.alpha as f32, cfg.focal.gamma as f32)?;
            let loss_value = g.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
            }
            let logits = g.value(out.logits);
            correct += y.iter().enumerate().filter(|&(i, &t)| argmax(logits.row(i)) == t).count();
            loss_sum += loss_value * chunk.len() as f64;
            let grads = g.backward(loss)?;
            grads.apply_to(&mut model.params)?;
            opt.step(&mut model.params)?;
            model.params.apply_buffer_updates(g.take_buffer_updates())?;
        }
        model.params.zero_grads();
        let val_logits = model.predict(&val_x, cfg.batch_size)?;
        let (val_loss, val_acc) = loss_and_accuracy(&val_logits, &val_y, &cfg.focal)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
            train_acc: correct as f64 / order.len() as f64,
            val_acc,
        };
        info!(
            "{} epoch {epoch}: train loss {:.5} acc {:.4}, val loss {:.5} acc {:.4}, lr {:.3e}",
            cfg.architecture, record.train_loss, record.train_acc, val_loss, val_acc, sched.lr
        );
        history.records.push(record);
        sched.step(val_loss);

        if val_loss < best.0 - PlateauScheduler::THRESHOLD {
            best = (val_loss, epoch, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                info!("early stop after epoch {epoch}; best epoch {}", best.1);
                break;
            }
        }
    }
    if best.1 > 0 {
        model.params = best.2;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.1,
        stopped_early,
        lr_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_one_defaults() {
        let c = TrainConfig::recipe(Architecture::Cnn);
        assert_eq!((c.batch_size, c.lr, c.epochs, c.patience), (128, 1.15e-3, 50, 8));
        assert_eq!(TrainConfig::recipe(Architecture::Resnet1d).lr, 1.22e-3);
        let l = TrainConfig::recipe(Architecture::CnnLstmAttn);
        assert_eq!((l.batch_size, l.lr), (96, 1e-3));
    }

    #[test]
    fn focal_examples() {
        let cfg = FocalLossConfig::default();
        let p = Tensor::new(&[2, 2], vec![0.5, 0.5, 0.0, 1.0]).unwrap();
        let v = focal_loss(&p, &[0, 1], &cfg).unwrap();
        assert!((v - 0.25 * std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        assert!(matches!(focal_loss(&p, &[0, 5], &cfg), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn focal_monotone_and_below_ce(a in 0.001f64..0.999, b in 0.001f64..0.999, gamma in 0.0f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(focal_term(hi, 1.0, gamma) <= focal_term(lo, 1.0, gamma));
            prop_assert!(focal_term(a, 1.0, gamma) <= -a.ln() + 1e-15);
            if gamma > 0.0 && a > 0.5 {
                prop_assert!(focal_term(a, 1.0, gamma) < -a.ln());
            }
        }
    }
}
