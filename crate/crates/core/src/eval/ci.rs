//! Percentile bootstrap over test samples and intervals across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::util::derive_seed;

pub const CI_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const MIN_SAMPLES: usize = 30;
pub const MIN_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub metric: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_resamples: usize,
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Resamples `0..n_samples` with replacement and evaluates `metric` on each
/// index multiset. Resample `r` draws from its own seed, so the result does
/// not depend on `threads`.
pub fn bootstrap_ci<F>(
    name: &str,
    n_samples: usize,
    metric: F,
    n_resamples: usize,
    seed: u64,
    threads: usize,
) -> Result<ConfidenceInterval>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n_samples < MIN_SAMPLES {
        return Err(Error::Metric(format!(
            "bootstrap needs at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::Metric(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {n_resamples}"
        )));
    }
    let one = |r: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let idx: Vec<usize> = (0..n_samples).map(|_| rng.gen_range(0..n_samples)).collect();
        metric(&idx)
    };
    let threads = threads.clamp(1, n_resamples);
    let per = n_resamples.div_ceil(threads);
    let mut values: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let one = &one;
                s.spawn(move || (t * per..((t + 1) * per).min(n_resamples)).map(one).collect::<Vec<f64>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("bootstrap worker panicked"))
            .collect()
    });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("metric {name} produced a non-finite resample value")));
    }
    let mean = values.iter().sum::<f64>() / n_resamples as f64;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - CI_LEVEL) / 2.0;
    Ok(ConfidenceInterval {
        metric: name.to_string(),
        mean,
        lower: quantile(&values, alpha),
        upper: quantile(&values, 1.0 - alpha),
        level: CI_LEVEL,
        n_resamples,
    })
}

/// Student-t interval of the mean of per-run values (for example one
/// macro-F1 per training seed).
pub fn across_runs_ci(name: &str, values: &[f64]) -> Result<ConfidenceInterval> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Metric(format!("an across-runs interval needs at least 2 runs, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Metric(e.to_string()))?
        .inverse_cdf(1.0 - (1.0 - CI_LEVEL) / 2.0);
    let half = t * (var / n as f64).sqrt();
    Ok(ConfidenceInterval {
        metric: name.to_string(),
        mean,
        lower: mean - half,
        upper: mean + half,
        level: CI_LEVEL,
        n_resamples: n,
    })
}
