//! Patch-based time-series anomaly detection with a similarity-trained
//! encoder, plus an evaluation toolkit for anomaly metrics and a synthetic
//! benchmark for probing how those metrics behave.
//!
//! The crate is organized around six pieces:
//!
//! * [`tensor`]: a small dense-tensor core with reverse-mode automatic
//!   differentiation on an explicit tape.
//! * [`model`]: the detection model itself (instance normalization, patching,
//!   value embedding, an attention encoder with learnable value tables, and
//!   the reconstruction / projection heads with their losses).
//! * [`trainer`]: AdamW, cosine learning-rate decay, the contrast-weight
//!   warm-up schedule, and the training loop with its line-delimited log.
//! * [`metrics`]: precision/recall/F1, point-adjusted F1, ROC-AUC, the
//!   affiliation family, and bias-corrected (unbiased/normalized) affiliation.
//! * [`synthbench`]: synthetic label generation and simulated detectors of
//!   known quality, used to benchmark the metrics themselves.
//! * [`io`]: CSV datasets, checkpoints, run configuration, and metric reports.
//!
//! Everything is deterministic under a fixed seed on a given platform.

pub mod datagen;
pub mod io;
pub mod metrics;
pub mod model;
pub mod synthbench;
pub mod tensor;
pub mod trainer;
