//! Loading whole WFDB records from a directory.

use std::path::{Path, PathBuf};

use log::warn;

use super::annotation::{parse_annotations, AnnotationEvent};
use super::beats::{segment_beats, select_lead, BeatDataset, BeatRecord, LeadChoice};
use super::format212::decode_format212;
use super::header::{parse_header, RecordHeader};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Record {
    pub header: RecordHeader,
    /// One vector of raw ADC values per signal.
    pub signals: Vec<Vec<i16>>,
    pub annotations: Vec<AnnotationEvent>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads `<name>.hea`, its signal file and `<name>.<annotator>`.
pub fn load_record(dir: &Path, name: &str, annotator: &str) -> Result<Record> {
    let header = parse_header(&read(&dir.join(format!("{name}.hea")))?)?;
    header.ensure_decodable()?;
    let dat = read(&dir.join(&header.signals[0].file_name))?;
    let n_samples = if header.n_samples > 0 {
        header.n_samples
    } else {
        dat.len() * 2 / 3 / header.n_signals()
    };
    let signals = decode_format212(&dat, n_samples, header.n_signals())?;
    let annotations = parse_annotations(&read(&dir.join(format!("{name}.{annotator}")))?)?;
    Ok(Record {
        header,
        signals,
        annotations,
    })
}

/// Record names in `dir` that have both a header and an annotation file,
/// sorted.
pub fn discover_records(dir: &Path, annotator: &str) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let path: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("hea") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if dir.join(format!("{stem}.{annotator}")).exists() {
            names.push(stem.to_string());
        }
    }
    names.sort();
    Ok(names)
}

pub fn record_beats(record: &Record, lead: &LeadChoice, beat_len: usize) -> Result<Vec<BeatRecord>> {
    let idx = select_lead(&record.header, lead)?;
    let signal: Vec<f64> = record.signals[idx].iter().map(|&v| f64::from(v)).collect();
    segment_beats(&signal, &record.annotations, beat_len, &record.header.record_name)
}

#[derive(Debug, Clone, Default)]
pub struct IngestSummary {
    pub records: Vec<String>,
    /// Records skipped because the requested lead is missing.
    pub skipped: Vec<String>,
}

/// Segments every annotated record in `dir`. With an exact lead request,
/// records lacking that lead are skipped and listed in the summary.
pub fn ingest_directory(
    dir: &Path,
    lead: &LeadChoice,
    beat_len: usize,
    annotator: &str,
) -> Result<(BeatDataset, IngestSummary)> {
    let names = discover_records(dir, annotator)?;
    if names.is_empty() {
        return Err(Error::Config(format!(
            "no records with .hea and .{annotator} files in {}",
            dir.display()
        )));
    }
    let mut beats = Vec::new();
    let mut summary = IngestSummary::default();
    for name in names {
        let record = load_record(dir, &name, annotator)?;
        match record_beats(&record, lead, beat_len) {
            Ok(b) => {
                beats.extend(b);
                summary.records.push(name);
            }
            Err(Error::Config(msg)) if matches!(lead, LeadChoice::Exact(_)) => {
                warn!("skipping record {name}: {msg}");
                summary.skipped.push(name);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((BeatDataset::new(beats, beat_len, 0), summary))
}
