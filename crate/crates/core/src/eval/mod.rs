//! Evaluation suite: confusion, precision/recall/F1, ROC AUC, confidence
//! intervals, Grad-CAM, and the report directory.

pub mod ci;
pub mod gradcam;
pub mod metrics;
pub mod report;
pub mod roc;

use log::warn;
use serde::{Deserialize, Serialize};

pub use ci::{across_runs_ci, bootstrap_ci, ConfidenceInterval, CI_LEVEL, DEFAULT_RESAMPLES};
pub use gradcam::{cam_raw, grad_cam, min_max, upsample_linear, SaliencyMap};
pub use metrics::{accuracy_at, confusion, macro_f1_at, prf1, ConfusionMatrix, MetricBundle};
pub use report::{render_report, write_saliency_maps, ReportInputs};
pub use roc::{roc_auc, RocCurve};

use crate::error::{Error, Result};
use crate::models::argmax;
use crate::tensor::{softmax_rows, Tensor};

/// All metrics for one set of `[n, C]` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricBundle,
    /// One-vs-rest curve per class on softmax probabilities; `None` when
    /// the class is absent from the labels or covers all of them.
    pub roc: Vec<Option<RocCurve>>,
}

pub fn evaluate(logits: &Tensor<f64>, y_true: &[usize]) -> Result<Evaluation> {
    if logits.ndim() != 2 || logits.dim(0) != y_true.len() {
        return Err(Error::Shape(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            y_true.len()
        )));
    }
    let k = logits.dim(1);
    let predictions: Vec<usize> = (0..logits.dim(0)).map(|i| argmax(logits.row(i))).collect();
    let cm = confusion(y_true, &predictions, k)?;
    let mut metrics = prf1(&cm);
    let probs = softmax_rows(logits);
    let mut roc = Vec::with_capacity(k);
    for c in 0..k {
        let scores: Vec<f64> = (0..y_true.len()).map(|i| probs.row(i)[c]).collect();
        let labels: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        match roc_auc(&scores, &labels) {
            Ok(curve) => roc.push(Some(curve)),
            Err(Error::Metric(m)) => {
                warn!("class {c}: AUC undefined ({m})");
                roc.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    metrics.auc = roc.iter().map(|r| r.as_ref().map(|c| c.auc)).collect();
    let defined: Vec<f64> = metrics.auc.iter().flatten().copied().collect();
    metrics.macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(Evaluation {
        predictions,
        confusion: cm,
        metrics,
        roc,
    })
}

/// Bootstrap intervals for accuracy and macro-F1 over test samples.
pub fn standard_cis(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
    n_resamples: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<ConfidenceInterval>> {
    let n = y_true.len();
    Ok(vec![
        bootstrap_ci("accuracy", n, |idx| accuracy_at(y_true, y_pred, idx), n_resamples, seed, threads)?,
        bootstrap_ci(
            "macro_f1",
            n,
            |idx| macro_f1_at(y_true, y_pred, idx, n_classes),
            n_resamples,
            seed,
            threads,
        )?,
    ])
}
