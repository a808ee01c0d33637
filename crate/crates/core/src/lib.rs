//! Beat-level arrhythmia classification on MIT-BIH style WFDB records.
//!
//! The crate covers the whole experimental workflow: record ingestion
//! ([`ingest`]), a small reverse-mode tensor library ([`tensor`]), the four
//! network architectures ([`models`]), the training recipe ([`train`]),
//! GAN-based minority oversampling ([`gan`]), logit-level late fusion
//! ([`ensemble`]), evaluation and Grad-CAM ([`eval`]), and command-line
//! orchestration ([`pipeline`]).

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod eval;
pub mod gan;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
