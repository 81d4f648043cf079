//! Anomaly-detection metrics over binary label series and real-valued score
//! series.
//!
//! All computations here are in f64 regardless of how the model core is
//! built. Labels are `&[bool]`, scores `&[f64]`, and events are maximal runs
//! of `true` represented as half-open `[start, end)` index ranges.
//!
//! Beyond the classical point-based metrics (precision/recall/F1, the
//! point-adjusted variant, ROC-AUC) this module implements the affiliation
//! family: zone-based precision/recall that measure how close predictions
//! land to ground-truth events, the bias a random scorer achieves on a given
//! label layout, and bias-corrected (unbiased / normalized) affiliation
//! scores that subtract that bias out.

mod affiliation;
mod classical;
mod evaluate;

pub mod mc;

pub use affiliation::{
    affiliation, empirical_bias, ideal_bias, normalized_affiliation, unbiased_affiliation,
    AffiliationScore, BiasCorrected, Zones,
};
pub use classical::{
    best_f1_threshold, binarize, f1_point_adjusted, point_adjust, precision_recall_f1,
    quantile, roc_auc, Prf1,
};
pub use evaluate::{evaluate, BiasSpec, EvalOptions, MetricReport, ThresholdSpec};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("score and label series lengths differ: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty series")]
    EmptySeries,
    #[error("labels contain no events")]
    NoEvents,
    #[error("labels contain only one class; {0} is undefined")]
    SingleClass(&'static str),
    #[error("scores contain non-finite values")]
    NonFiniteScore,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Maximal runs of `true`, as sorted disjoint half-open ranges.
pub fn events_from_labels(labels: &[bool]) -> Vec<(usize, usize)> {
    let mut events = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                events.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        events.push((s, labels.len()));
    }
    events
}

/// Inverse of [`events_from_labels`].
pub fn labels_from_events(events: &[(usize, usize)], n: usize) -> Vec<bool> {
    let mut labels = vec![false; n];
    for &(s, e) in events {
        assert!(s <= e && e <= n, "event [{s}, {e}) out of bounds for length {n}");
        for l in &mut labels[s..e] {
            *l = true;
        }
    }
    labels
}
