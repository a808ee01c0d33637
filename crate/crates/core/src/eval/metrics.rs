//! Confusion matrices and threshold metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Each row divided by its support; zero-support rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

/// Tallies `(true, predicted)` pairs over `n_classes` classes.
pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Usage(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Usage(format!(
                "sample {i}: label pair ({t}, {p}) outside 0..{n_classes}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Accuracy, per-class and macro precision/recall/F1, and ROC AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `None` for a class absent from (or covering all of) the labels.
    pub auc: Vec<Option<f64>>,
    /// Mean over classes with a defined AUC.
    pub macro_auc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Threshold metrics. Zero denominators give 0; the AUC fields are left empty.
pub fn prf1(cm: &ConfusionMatrix) -> MetricBundle {
    let k = cm.n_classes();
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let p = ratio(tp, cm.predicted(c));
        let r = ratio(tp, cm.support(c));
        precision.push(p);
        recall.push(r);
        f1.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    MetricBundle {
        accuracy: ratio(cm.trace(), cm.total()),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        support: (0..k).map(|c| cm.support(c)).collect(),
        precision,
        recall,
        f1,
        auc: vec![None; k],
        macro_auc: None,
    }
}

/// Accuracy over a subset of sample indices (bootstrap helper).
pub fn accuracy_at(y_true: &[usize], y_pred: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().filter(|&&i| y_true[i] == y_pred[i]).count() as f64 / idx.len() as f64
}

/// Macro-F1 over a subset of sample indices (bootstrap helper).
pub fn macro_f1_at(y_true: &[usize], y_pred: &[usize], idx: &[usize], n_classes: usize) -> f64 {
    let t: Vec<usize> = idx.iter().map(|&i| y_true[i]).collect();
    let p: Vec<usize> = idx.iter().map(|&i| y_pred[i]).collect();
    confusion(&t, &p, n_classes).map_or(0.0, |cm| prf1(&cm).macro_f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_example() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        let m = prf1(&cm);
        assert_eq!(m.precision, vec![1.0, 0.5]);
        assert_eq!(m.recall, vec![0.5, 1.0]);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_never_predicted() {
        let m = prf1(&confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap());
        assert!(m.f1.iter().all(|&f| f == 1.0) && m.accuracy == 1.0);
        let m = prf1(&confusion(&[0, 1, 1], &[0, 0, 0], 3).unwrap());
        assert_eq!((m.precision[1], m.recall[1], m.f1[1]), (0.0, 0.0, 0.0));
        assert_eq!(m.support[2], 0);
    }

    #[test]
    fn zero_support_rows_stay_zero() {
        let cm = confusion(&[0, 0], &[0, 1], 3).unwrap();
        let n = cm.normalized();
        assert_eq!(n[0], vec![0.5, 0.5, 0.0]);
        assert_eq!(n[2], vec![0.0; 3]);
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(confusion(&[5], &[0], 5), Err(Error::Usage(_))));
        assert!(matches!(confusion(&[0, 1], &[0], 5), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn bundle_invariants(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..300)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, 5).unwrap();
            prop_assert_eq!(cm.total(), t.len() as u64);
            let m = prf1(&cm);
            prop_assert_eq!(m.accuracy, cm.trace() as f64 / t.len() as f64);
            for c in 0..5 {
                let (pc, rc, fc) = (m.precision[c], m.recall[c], m.f1[c]);
                prop_assert!(fc >= pc.min(rc) - 1e-12 && fc <= pc.max(rc) + 1e-12);
            }
            for (row, s) in cm.normalized().iter().zip(&m.support) {
                if *s > 0 {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            prop_assert!((m.macro_f1 - m.f1.iter().sum::<f64>() / 5.0).abs() < 1e-15);
        }
    }
}
