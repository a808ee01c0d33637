//! Report directory writer. Identical inputs give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ci::ConfidenceInterval;
use super::gradcam::SaliencyMap;
use super::metrics::{ConfusionMatrix, MetricBundle};
use super::Evaluation;
use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::train::TrainingHistory;

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CONFUSION_NORMALIZED_FILE: &str = "confusion_normalized.csv";
pub const CI_FILE: &str = "ci.csv";
pub const HISTORY_FILE: &str = "history.csv";

pub fn roc_file(class: usize) -> String {
    format!("roc_class_{class}.csv")
}

pub fn gradcam_file(sample: usize) -> String {
    format!("gradcam_{sample}.csv")
}

/// Everything a report can contain; optional parts are skipped.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    /// Model id or ensemble strategy the numbers describe.
    pub label: &'a str,
    pub evaluation: &'a Evaluation,
    pub cis: &'a [ConfidenceInterval],
    /// `(test sample index, map)` pairs.
    pub saliency: &'a [(usize, SaliencyMap)],
    pub history: Option<&'a TrainingHistory>,
    pub ensemble: Option<&'a EnsembleSpec>,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    label: &'a str,
    n_samples: usize,
    metrics: &'a MetricBundle,
    confusion: &'a ConfusionMatrix,
    confidence_intervals: &'a [ConfidenceInterval],
    #[serde(skip_serializing_if = "Option::is_none")]
    ensemble: Option<&'a EnsembleSpec>,
}

fn write(path: PathBuf, bytes: &[u8], produced: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    produced.push(path);
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::io("<report>", e.into_error()))
}

fn matrix_csv<V: ToString>(rows: &[Vec<V>]) -> Result<Vec<u8>> {
    let mut header = vec!["true".to_string()];
    header.extend((0..rows.len()).map(|c| format!("pred_{c}")));
    csv_bytes(
        &header,
        rows.iter().enumerate().map(|(i, r)| {
            std::iter::once(i.to_string())
                .chain(r.iter().map(ToString::to_string))
                .collect()
        }),
    )
}

/// Writes one `gradcam_<sample>.csv` per map into an existing `dir`.
pub fn write_saliency_maps(dir: &Path, maps: &[(usize, SaliencyMap)]) -> Result<Vec<PathBuf>> {
    let mut produced = Vec::new();
    let header = vec!["index".to_string(), "saliency".to_string(), "target".to_string()];
    for (sample, map) in maps {
        let rows = map
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), v.to_string(), map.target.to_string()]);
        write(dir.join(gradcam_file(*sample)), &csv_bytes(&header, rows)?, &mut produced)?;
    }
    Ok(produced)
}

/// Writes the report files into `dir` (created if missing) and returns
/// their paths in write order.
pub fn render_report(dir: &Path, inputs: &ReportInputs) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ev = inputs.evaluation;
    let mut produced = Vec::new();

    let metrics = MetricsFile {
        label: inputs.label,
        n_samples: ev.predictions.len(),
        metrics: &ev.metrics,
        confusion: &ev.confusion,
        confidence_intervals: inputs.cis,
        ensemble: inputs.ensemble,
    };
    let mut json = serde_json::to_vec_pretty(&metrics)?;
    json.push(b'\n');
    write(dir.join(METRICS_FILE), &json, &mut produced)?;
    write(dir.join(CONFUSION_FILE), &matrix_csv(&ev.confusion.counts)?, &mut produced)?;
    write(
        dir.join(CONFUSION_NORMALIZED_FILE),
        &matrix_csv(&ev.confusion.normalized())?,
        &mut produced,
    )?;
    for (c, curve) in ev.roc.iter().enumerate() {
        let Some(curve) = curve else { continue };
        let rows = curve.fpr.iter().zip(&curve.tpr).map(|(f, t)| vec![f.to_string(), t.to_string()]);
        write(
            dir.join(roc_file(c)),
            &csv_bytes(&["fpr".into(), "tpr".into()], rows)?,
            &mut produced,
        )?;
    }
    let ci_header: Vec<String> = ["metric", "mean", "lower", "upper", "level", "n_resamples"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ci_rows = inputs.cis.iter().map(|ci| {
        vec![
            ci.metric.clone(),
            ci.mean.to_string(),
            ci.lower.to_string(),
            ci.upper.to_string(),
            ci.level.to_string(),
            ci.n_resamples.to_string(),
        ]
    });
    write(dir.join(CI_FILE), &csv_bytes(&ci_header, ci_rows)?, &mut produced)?;
    produced.extend(write_saliency_maps(dir, inputs.saliency)?);
    if let Some(h) = inputs.history {
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write(dir.join(HISTORY_FILE), &buf, &mut produced)?;
    }
    Ok(produced)
}
