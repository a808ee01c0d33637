//! WFDB record ingestion: headers, format-212 signals, MIT annotations, and
//! the beat dataset built from them.

pub mod annotation;
pub mod beats;
pub mod csv_io;
pub mod format212;
pub mod header;
pub mod labels;
pub mod record;

pub use annotation::{parse_annotations, AnnotationEvent};
pub use beats::{
    normalize_beat, segment_beats, stratified_split, BeatDataset, BeatRecord, BeatSource,
    LeadChoice, SplitTag, DEFAULT_BEAT_LEN,
};
pub use format212::{decode_format212, encode_format212};
pub use header::{parse_header, RecordHeader, SignalSpec};
pub use labels::{map_code_to_label, CLASS_NAMES, N_CLASSES};
