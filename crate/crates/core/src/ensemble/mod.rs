//! Late fusion of classifier logits.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::argmax;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AllEqual,
    Top3Equal,
    Top2Equal,
    Top2Weighted,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::AllEqual,
        Strategy::Top3Equal,
        Strategy::Top2Equal,
        Strategy::Top2Weighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AllEqual => "all_equal",
            Strategy::Top3Equal => "top3_equal",
            Strategy::Top2Equal => "top2_equal",
            Strategy::Top2Weighted => "top2_weighted",
        }
    }

    /// Members a strategy needs.
    pub fn required_members(self) -> usize {
        match self {
            Strategy::AllEqual | Strategy::Top2Equal | Strategy::Top2Weighted => 2,
            Strategy::Top3Equal => 3,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown ensemble strategy {s:?}")))
    }
}

/// Members and their convex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub strategy: Strategy,
    pub members: Vec<String>,
    pub weights: Vec<f64>,
}

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 || self.members.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "an ensemble needs at least two members with one weight each (got {} and {})",
                self.members.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!("negative or non-finite weight in {:?}", self.weights)));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Config(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// `z = sum_m w_m f_m` over `[n, C]` logit matrices.
pub fn fuse(logits: &[Tensor<f64>], weights: &[f64]) -> Result<Tensor<f64>> {
    let first = logits
        .first()
        .ok_or_else(|| Error::Shape("fusion of zero logit sets".into()))?;
    if logits.len() != weights.len() {
        return Err(Error::Shape(format!("{} logit sets for {} weights", logits.len(), weights.len())));
    }
    if first.ndim() != 2 {
        return Err(Error::Shape(format!("logits must be [n, C], got {:?}", first.shape())));
    }
    if let Some(bad) = logits.iter().find(|l| l.shape() != first.shape()) {
        return Err(Error::Shape(format!(
            "logit sets disagree in shape: {:?} vs {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    let mut out = vec![0.0; first.len()];
    for (l, &w) in logits.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(l.data()) {
            *o += w * v;
        }
    }
    Tensor::new(first.shape(), out)
}

/// Row-wise argmax with ties to the lowest class index.
pub fn predict(logits: &Tensor<f64>) -> Vec<usize> {
    (0..logits.dim(0)).map(|i| argmax(logits.row(i))).collect()
}

/// Weights proportional to the two validation macro-F1 scores.
pub fn top2_weights(f1_best: f64, f1_second: f64) -> Result<(f64, f64)> {
    for f in [f1_best, f1_second] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Usage(format!("F1 score {f} outside [0, 1]")));
        }
    }
    let total = f1_best + f1_second;
    if total == 0.0 {
        return Err(Error::Usage("both F1 scores are zero".into()));
    }
    let w1 = f1_best / total;
    Ok((w1, 1.0 - w1))
}

/// Member indices ordered by descending score; ties keep input order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Selects members and weights for `strategy` from validation macro-F1.
pub fn build_strategy(ids: &[String], val_macro_f1: &[f64], strategy: Strategy) -> Result<EnsembleSpec> {
    if ids.len() != val_macro_f1.len() {
        return Err(Error::Config(format!("{} models but {} scores", ids.len(), val_macro_f1.len())));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config(format!("duplicate model ids in {ids:?}")));
    }
    if ids.len() < strategy.required_members() {
        return Err(Error::Config(format!(
            "{strategy} needs at least {} models, got {}",
            strategy.required_members(),
            ids.len()
        )));
    }
    let order = ranking(val_macro_f1);
    let (members, weights): (Vec<usize>, Vec<f64>) = match strategy {
        Strategy::AllEqual => {
            let n = ids.len();
            ((0..n).collect(), vec![1.0 / n as f64; n])
        }
        Strategy::Top3Equal => (order[..3].to_vec(), vec![1.0 / 3.0; 3]),
        Strategy::Top2Equal => (order[..2].to_vec(), vec![0.5; 2]),
        Strategy::Top2Weighted => {
            let (w1, w2) = top2_weights(val_macro_f1[order[0]], val_macro_f1[order[1]])?;
            (order[..2].to_vec(), vec![w1, w2])
        }
    };
    let spec = EnsembleSpec {
        strategy,
        members: members.iter().map(|&i| ids[i].clone()).collect(),
        weights,
    };
    spec.validate()?;
    Ok(spec)
}

/// One entry of an ensemble manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub checkpoint: PathBuf,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub models: Vec<ManifestEntry>,
}

impl EnsembleManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        Ok(m)
    }

    /// Relative checkpoint paths resolve against `base`.
    pub fn resolve(&self, base: &Path) -> Vec<PathBuf> {
        self.models
            .iter()
            .map(|m| if m.checkpoint.is_absolute() { m.checkpoint.clone() } else { base.join(&m.checkpoint) })
            .collect()
    }
}

/// Writes `sample_id,logit_0..logit_{C-1}` rows.
pub fn write_logits_csv<W: Write>(out: W, logits: &Tensor<f64>) -> Result<()> {
    let k = logits.dim(1);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..k).map(|c| format!("logit_{c}")));
    w.write_record(&header)?;
    for i in 0..logits.dim(0) {
        let mut row = vec![i.to_string()];
        row.extend(logits.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<logits>", e))?;
    Ok(())
}

pub fn read_logits_csv<R: Read>(input: R) -> Result<Tensor<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let k = headers.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("sample_id".to_string())
        .chain((0..k).map(|c| format!("logit_{c}")))
        .collect();
    if k == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            message: format!("unexpected logit header {headers:?}"),
            line: Some(1),
            offset: None,
        });
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: String| Error::Parse {
            message: m,
            line: Some(line),
            offset: None,
        };
        if rec.get(0).and_then(|s| s.parse::<usize>().ok()) != Some(i) {
            return Err(bad(format!("sample ids must run 0, 1, ...; expected {i}")));
        }
        for f in rec.iter().skip(1) {
            data.push(f.parse::<f64>().map_err(|_| bad(format!("invalid logit {f:?}")))?);
        }
        n += 1;
    }
    Tensor::new(&[n, k], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn t(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::new(&[rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn equal_weights_tie_goes_to_lowest_class() {
        let z = fuse(&[t(&[[1.0, 0.0]]), t(&[[0.0, 1.0]])], &[0.5, 0.5]).unwrap();
        assert_eq!(z.data(), &[0.5, 0.5]);
        assert_eq!(predict(&z), vec![0]);
    }

    #[test]
    fn degenerate_weights_copy_member() {
        let a = t(&[[0.2, 0.9], [3.0, -1.0]]);
        let b = t(&[[5.0, 0.0], [0.0, 5.0]]);
        let z = fuse(&[a.clone(), b], &[1.0, 0.0]).unwrap();
        assert_eq!(predict(&z), predict(&a));
        assert_eq!(fuse(std::slice::from_ref(&a), &[1.0]).unwrap(), a);
    }

    #[test]
    fn shape_mismatch() {
        let a = t(&[[0.0, 1.0]]);
        let b = t(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(matches!(fuse(&[a, b], &[0.5, 0.5]), Err(Error::Shape(_))));
    }

    #[test]
    fn top2_examples() {
        let (w1, w2) = top2_weights(0.956, 0.951).unwrap();
        assert!((w1 - 0.50131).abs() < 1e-5 && (w2 - 0.49869).abs() < 1e-5);
        assert_eq!(top2_weights(0.8, 0.8).unwrap(), (0.5, 0.5));
        let (a, b) = top2_weights(1.0, 1e-12).unwrap();
        assert!(a > 1.0 - 1e-11 && b < 1e-11);
        assert!(matches!(top2_weights(0.0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn strategies() {
        let ids: Vec<String> = ["cnn", "cnn_lstm", "cnn_lstm_attn", "resnet1d"].iter().map(|s| s.to_string()).collect();
        let spec = build_strategy(&ids, &[0.9, 0.8, 0.7, 0.6], Strategy::AllEqual).unwrap();
        assert_eq!(spec.weights, vec![0.25; 4]);
        let spec = build_strategy(&ids, &[0.9, 0.8, 0.7, 0.6], Strategy::Top3Equal).unwrap();
        assert_eq!(spec.members, &ids[..3]);
        assert!(spec.weights.iter().all(|&w| w == 1.0 / 3.0));
        let spec = build_strategy(&ids, &[0.956, 0.951, 0.94, 0.93], Strategy::Top2Equal).unwrap();
        assert_eq!(spec.members, vec!["cnn", "cnn_lstm"]);
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(build_strategy(&dup, &[0.5, 0.4], Strategy::AllEqual), Err(Error::Config(_))));
        assert!(build_strategy(&ids[..2], &[0.5, 0.4], Strategy::Top3Equal).is_err());
    }

    #[test]
    fn logit_csv_round_trip() {
        let l = Tensor::new(&[2, 5], vec![0.1, -2.5, 3.0, 1e-20, 7.25, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_logits_csv(&mut buf, &l).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("sample_id,logit_0,logit_1,logit_2,logit_3,logit_4\n"));
        assert_eq!(read_logits_csv(buf.as_slice()).unwrap(), l);
    }

    proptest! {
        #[test]
        fn unanimous_members_decide(rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 5), 3),
                                    w in proptest::collection::vec(0.01f64..1.0, 3)) {
            let sum: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / sum).collect();
            // Shift every member so class 2 is its strict maximum.
            let sets: Vec<Tensor<f64>> = rows.iter().map(|r| {
                let mut r = r.clone();
                let m = r.iter().cloned().fold(f64::MIN, f64::max);
                r[2] = m + 1.0;
                Tensor::new(&[1, 5], r).unwrap()
            }).collect();
            prop_assert_eq!(predict(&fuse(&sets, &w).unwrap()), vec![2]);
        }
    }
}
