use std::collections::BTreeMap;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{Discriminator, Generator};
use super::train::{gan_train, GanOutcome, GanTrainConfig};
use crate::error::{Error, Result};
use crate::ingest::{BeatDataset, BeatRecord, BeatSource, SplitTag, CLASS_NAMES, N_CLASSES};

/// Candidate draws allowed per requested beat.
pub const ATTEMPT_FACTOR: usize = 50;
const DRAW_CHUNK: usize = 64;

/// Draws generator candidates and keeps those the discriminator scores at
/// least `tau`, until `n_needed` are accepted or `50 * n_needed` have been
/// drawn. Accepted beats are tagged `train` and `synthetic`.
pub fn synthesize(
    generator: &Generator,
    discriminator: &Discriminator,
    label: usize,
    n_needed: usize,
    tau: f64,
    seed: u64,
) -> Result<Vec<BeatRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = ATTEMPT_FACTOR * n_needed;
    let mut accepted = Vec::with_capacity(n_needed);
    let mut drawn = 0;
    while accepted.len() < n_needed && drawn < budget {
        let n = DRAW_CHUNK.min(budget - drawn);
        let z = generator.sample_noise(n, &mut rng);
        let beats = generator.generate(&z)?;
        let conf = discriminator.confidence(&beats)?;
        drawn += n;
        for (i, &c) in conf.iter().enumerate() {
            if accepted.len() == n_needed {
                break;
            }
            if c as f64 >= tau {
                accepted.push(BeatRecord {
                    samples: beats.row(i).to_vec(),
                    label,
                    source: BeatSource::Synthetic,
                    split: SplitTag::Train,
                });
            }
        }
    }
    if accepted.len() < n_needed {
        return Err(Error::Augment(format!(
            "class {label}: only {} of {n_needed} candidates reached tau {tau} within {drawn} draws \
             (acceptance rate {:.4})",
            accepted.len(),
            accepted.len() as f64 / drawn.max(1) as f64
        )));
    }
    Ok(accepted)
}

/// Train-split class counts before and after balancing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub classes: Vec<String>,
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    pub before_percent: Vec<f64>,
    pub after_percent: Vec<f64>,
    pub target: usize,
    pub tau: f64,
}

fn percentages(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
        .collect()
}

impl BalanceReport {
    pub fn new(before: [usize; N_CLASSES], after: [usize; N_CLASSES], target: usize, tau: f64) -> Self {
        Self {
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            before_percent: percentages(&before),
            after_percent: percentages(&after),
            before: before.to_vec(),
            after: after.to_vec(),
            target,
            tau,
        }
    }
}

/// Classes other than Normal whose train count is below the balance target.
pub fn deficient_classes(ds: &BeatDataset, ratio: f64) -> (usize, Vec<(usize, usize)>) {
    let counts = ds.split_counts(SplitTag::Train);
    let target = (*counts.iter().max().unwrap_or(&0) as f64 * ratio).round() as usize;
    let needs = (1..N_CLASSES)
        .filter(|&c| counts[c] < target)
        .map(|c| (c, target - counts[c]))
        .collect();
    (target, needs)
}

/// Raises every non-Normal class of the train split to `ratio` times the
/// majority train count with synthetic beats. Val and test beats are never
/// touched and the Normal class is never augmented.
pub fn balance_dataset(
    ds: &BeatDataset,
    generators: &BTreeMap<usize, (Generator, Discriminator)>,
    tau: f64,
    ratio: f64,
    seed: u64,
) -> Result<(BeatDataset, BalanceReport)> {
    if !(ratio > 0.0) {
        return Err(Error::Config(format!("balance ratio {ratio} must be positive")));
    }
    let before = ds.split_counts(SplitTag::Train);
    let (target, needs) = deficient_classes(ds, ratio);
    if before[0] < target {
        warn!("Normal class is below the balance target and is left unaugmented");
    }
    let mut out = ds.clone();
    for (class, need) in needs {
        let (g, d) = generators.get(&class).ok_or_else(|| {
            Error::Config(format!("no generator for class {} which needs {need} beats", CLASS_NAMES[class]))
        })?;
        let beats = synthesize(g, d, class, need, tau, seed ^ (class as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407))?;
        info!("class {}: added {} synthetic beats", CLASS_NAMES[class], beats.len());
        out.beats.extend(beats);
    }
    let after = out.split_counts(SplitTag::Train);
    Ok((out, BalanceReport::new(before, after, target, tau)))
}

/// Trains one GAN per deficient class on its real train beats, running up
/// to `threads` classes concurrently. Each class uses its own seed.
pub fn train_class_gans(
    ds: &BeatDataset,
    cfg: &GanTrainConfig,
    seed: u64,
    threads: usize,
) -> Result<BTreeMap<usize, GanOutcome>> {
    let (_, needs) = deficient_classes(ds, cfg.balance_ratio);
    let classes: Vec<usize> = needs.into_iter().map(|(c, _)| c).collect();
    let per_class: Vec<(usize, Vec<BeatRecord>)> = classes
        .iter()
        .map(|&c| {
            let beats = ds
                .beats
                .iter()
                .filter(|b| b.label == c && b.split == SplitTag::Train && !b.source.is_synthetic())
                .cloned()
                .collect();
            (c, beats)
        })
        .collect();
    let class_seed = |c: usize| seed ^ (c as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut results = BTreeMap::new();
    for group in per_class.chunks(threads.max(1)) {
        let outcomes: Vec<Result<GanOutcome>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|(c, beats)| s.spawn(move || gan_train(beats, cfg, class_seed(*c))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("GAN worker panicked")).collect()
        });
        for ((c, _), outcome) in group.iter().zip(outcomes) {
            results.insert(*c, outcome?);
        }
    }
    Ok(results)
}
