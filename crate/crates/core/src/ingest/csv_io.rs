//! Canonical beat CSV: `s0..s{L-1},label`, optionally followed by `source`
//! (`real`/`synthetic`) and `split` columns.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::beats::{BeatDataset, BeatRecord, BeatSource, SplitTag};
use super::labels::N_CLASSES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvColumns {
    pub source: bool,
    pub split: bool,
}

pub fn write_beats<W: Write>(out: W, ds: &BeatDataset, cols: CsvColumns) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..ds.beat_len).map(|i| format!("s{i}")).collect();
    header.push("label".into());
    if cols.source {
        header.push("source".into());
    }
    if cols.split {
        header.push("split".into());
    }
    w.write_record(&header)?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for b in &ds.beats {
        if b.samples.len() != ds.beat_len {
            return Err(Error::Shape(format!(
                "beat has {} samples, dataset length is {}",
                b.samples.len(),
                ds.beat_len
            )));
        }
        row.clear();
        row.extend(b.samples.iter().map(|v| v.to_string()));
        row.push(b.label.to_string());
        if cols.source {
            row.push(if b.source.is_synthetic() { "synthetic" } else { "real" }.into());
        }
        if cols.split {
            row.push(b.split.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_beats_file(path: &Path, ds: &BeatDataset, cols: CsvColumns) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_beats(std::io::BufWriter::new(f), ds, cols)
}

pub fn read_beats<R: Read>(input: R) -> Result<BeatDataset> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Config("beat CSV has no label column".into()))?;
    for (i, h) in headers.iter().take(label_col).enumerate() {
        if h != format!("s{i}") {
            return Err(Error::Config(format!("unexpected column {h:?} at position {i}")));
        }
    }
    let source_col = headers.iter().position(|h| h == "source");
    let split_col = headers.iter().position(|h| h == "split");
    let beat_len = label_col;

    let mut beats = Vec::new();
    for (row_no, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Config(format!("row {}: bad {what}", row_no + 1));
        let samples = (0..beat_len)
            .map(|i| rec[i].trim().parse::<f32>().map_err(|_| bad("sample")))
            .collect::<Result<Vec<_>>>()?;
        let label: usize = rec[label_col].trim().parse().map_err(|_| bad("label"))?;
        if label >= N_CLASSES {
            return Err(bad("label"));
        }
        let source = match source_col.map(|c| &rec[c]) {
            Some("synthetic") => BeatSource::Synthetic,
            Some("real") | None => BeatSource::Real {
                record: String::new(),
                r_peak: 0,
            },
            Some(_) => return Err(bad("source")),
        };
        let split = match split_col {
            Some(c) => rec[c].parse()?,
            None => SplitTag::Unassigned,
        };
        beats.push(BeatRecord {
            samples,
            label,
            source,
            split,
        });
    }
    Ok(BeatDataset::new(beats, beat_len, 0))
}

pub fn read_beats_file(path: &Path) -> Result<BeatDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_beats(std::io::BufReader::new(f))
}
