//! Beat segmentation, normalization and stratified partitioning.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::annotation::AnnotationEvent;
use super::header::RecordHeader;
use super::labels::{map_code_to_label, N_CLASSES};
use crate::error::{Error, Result};

/// Default beat length: samples per segmented beat.
pub const DEFAULT_BEAT_LEN: usize = 187;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum SplitTag {
    #[default]
    Unassigned,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Unassigned => "unassigned",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unassigned" | "" => Ok(SplitTag::Unassigned),
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Config(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BeatSource {
    Real { record: String, r_peak: u64 },
    Synthetic,
}

impl BeatSource {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, BeatSource::Synthetic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatRecord {
    pub samples: Vec<f32>,
    pub label: usize,
    pub source: BeatSource,
    pub split: SplitTag,
}

impl BeatRecord {
    /// Checks the length, label and value-range invariants.
    pub fn validate(&self, beat_len: usize) -> Result<()> {
        if self.samples.len() != beat_len {
            return Err(Error::Shape(format!(
                "beat has {} samples, expected {beat_len}",
                self.samples.len()
            )));
        }
        if self.label >= N_CLASSES {
            return Err(Error::Usage(format!("label {} out of range", self.label)));
        }
        if let Some(v) = self.samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numerical(format!("sample {v} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatDataset {
    pub beats: Vec<BeatRecord>,
    pub beat_len: usize,
    pub rng_seed: u64,
}

impl BeatDataset {
    pub fn new(beats: Vec<BeatRecord>, beat_len: usize, rng_seed: u64) -> Self {
        Self {
            beats,
            beat_len,
            rng_seed,
        }
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        count_labels(self.beats.iter())
    }

    pub fn split_counts(&self, tag: SplitTag) -> [usize; N_CLASSES] {
        count_labels(self.beats.iter().filter(|b| b.split == tag))
    }

    pub fn indices_with(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.beats.len())
            .filter(|&i| self.beats[i].split == tag)
            .collect()
    }

    pub fn subset(&self, tag: SplitTag) -> BeatDataset {
        BeatDataset {
            beats: self.beats.iter().filter(|b| b.split == tag).cloned().collect(),
            beat_len: self.beat_len,
            rng_seed: self.rng_seed,
        }
    }

    pub fn has_split_tags(&self) -> bool {
        self.beats.iter().any(|b| b.split != SplitTag::Unassigned)
    }
}

fn count_labels<'a>(beats: impl Iterator<Item = &'a BeatRecord>) -> [usize; N_CLASSES] {
    let mut counts = [0; N_CLASSES];
    for b in beats {
        counts[b.label] += 1;
    }
    counts
}

/// Which signal of a record to segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeadChoice {
    /// MLII when present, otherwise the first signal.
    PreferMlii,
    Exact(String),
}

impl FromStr for LeadChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "auto" => LeadChoice::PreferMlii,
            other => LeadChoice::Exact(other.to_string()),
        })
    }
}

pub fn select_lead(header: &RecordHeader, lead: &LeadChoice) -> Result<usize> {
    match lead {
        LeadChoice::PreferMlii => Ok(header.lead_index("MLII").unwrap_or(0)),
        LeadChoice::Exact(name) => header.lead_index(name).ok_or_else(|| {
            Error::Config(format!(
                "record {} has no lead {name:?} (leads: {})",
                header.record_name,
                header
                    .signals
                    .iter()
                    .map(|s| s.description.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        }),
    }
}

/// `(before, after)` sample counts around the R-peak for a window of `len`.
pub fn window_extent(len: usize) -> (usize, usize) {
    let before = len / 2;
    (before, len - 1 - before)
}

/// Min-max scales a beat to `[0, 1]`. A constant beat maps to all zeros.
pub fn normalize_beat(samples: &[f64]) -> Vec<f64> {
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; samples.len()];
    }
    samples.iter().map(|&v| (v - min) / range).collect()
}

/// Cuts one normalized beat per mapped annotation whose window lies inside
/// the signal. Beats too close to either record edge are dropped.
pub fn segment_beats(
    signal: &[f64],
    annotations: &[AnnotationEvent],
    window_len: usize,
    record_name: &str,
) -> Result<Vec<BeatRecord>> {
    if window_len < 3 {
        return Err(Error::Config(format!("beat length {window_len} is below 3")));
    }
    let (before, after) = window_extent(window_len);
    let mut beats = Vec::new();
    for ann in annotations {
        let Some(label) = map_code_to_label(ann.code) else {
            continue;
        };
        let r = ann.sample_index as usize;
        if r < before || r + after >= signal.len() {
            continue;
        }
        let window = &signal[r - before..=r + after];
        beats.push(BeatRecord {
            samples: normalize_beat(window).into_iter().map(|v| v as f32).collect(),
            label,
            source: BeatSource::Real {
                record: record_name.to_string(),
                r_peak: ann.sample_index,
            },
            split: SplitTag::Unassigned,
        });
    }
    Ok(beats)
}

/// Number of members of a class of size `count` that go to the smaller side
/// of a `keep_fraction` split.
fn held_out(count: usize, keep_fraction: f64) -> usize {
    // Guard against representation error, e.g. 60 * 0.15 = 8.999...
    ((count as f64) * (1.0 - keep_fraction) + 1e-9).floor() as usize
}

fn class_members(ds: &BeatDataset, eligible: impl Fn(&BeatRecord) -> bool) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, b) in ds.beats.iter().enumerate() {
        if eligible(b) {
            by_class.entry(b.label).or_default().push(i);
        }
    }
    by_class
}

/// Tags every non-test beat as train or validation, class by class.
///
/// Per class, `floor(count * (1 - train_fraction))` shuffled members go to
/// validation and the rest to training.
pub fn stratified_split(ds: &mut BeatDataset, train_fraction: f64, seed: u64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let by_class = class_members(ds, |b| b.split != SplitTag::Test);
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::Split(format!(
            "class {class} has {} member(s); at least 2 are required",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let n_val = held_out(members.len(), train_fraction);
        for (k, &i) in members.iter().enumerate() {
            ds.beats[i].split = if k < n_val { SplitTag::Val } else { SplitTag::Train };
        }
    }
    ds.rng_seed = seed;
    Ok(())
}

/// Tags `floor(count * test_fraction)` members of each class as test.
/// Classes too small to give up a member are left untouched.
pub fn hold_out_test(ds: &mut BeatDataset, test_fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} must lie in [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7E57);
    for (_, mut members) in class_members(ds, |_| true) {
        members.shuffle(&mut rng);
        let n_test = held_out(members.len(), 1.0 - test_fraction);
        for &i in &members[..n_test] {
            ds.beats[i].split = SplitTag::Test;
        }
    }
    Ok(())
}
