//! One-call evaluation of a score series against labels, producing a full
//! [`MetricReport`].

use serde::{Deserialize, Serialize};

use super::affiliation::{affiliation, empirical_bias, ideal_bias, normalized_affiliation, unbiased_affiliation};
use super::classical::{best_f1_threshold, binarize, precision_recall_f1, quantile, roc_auc};
use super::{events_from_labels, MetricsError};

/// How the decision threshold over scores is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    /// Scan candidate thresholds and keep the one maximizing plain F1.
    BestF1,
    /// Threshold at this quantile of the score distribution.
    Quantile(f64),
    /// A fixed threshold value.
    Value(f64),
}

/// Which affiliation-precision baseline the unbiased scores subtract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasSpec {
    /// Measure the baseline with this many random-scorer repetitions.
    Empirical { reps: usize },
    /// Closed-form baseline from the anomaly ratio.
    Ideal,
    /// A fixed baseline value in [0, 1).
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threshold: ThresholdSpec,
    pub bias: BiasSpec,
    /// Reference baseline for the normalized score.
    pub naff_beta: f64,
    /// Seed for the empirical-bias random scorer.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: ThresholdSpec::BestF1,
            bias: BiasSpec::Empirical { reps: 20 },
            naff_beta: 0.5,
            seed: 0,
        }
    }
}

/// Quantile used when measuring the empirical bias (the random scorer is
/// thresholded at its own 95th percentile).
const BIAS_THRESHOLD_Q: f64 = 0.95;

/// All metrics of one evaluation. Ratios are fractions in [0, 1] except the
/// signed bias-corrected scores, which may be negative.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub n: usize,
    pub anomaly_ratio: f64,
    pub threshold: f64,
    pub threshold_mode: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_pa: f64,
    /// Absent when the labels contain a single class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub aff_precision: f64,
    pub aff_recall: f64,
    pub aff_f1: f64,
    /// Set when the thresholded predictions were empty, making affiliation
    /// precision undefined (reported as 0).
    pub aff_degenerate: bool,
    pub bias_mode: String,
    /// The affiliation-precision baseline subtracted by the unbiased scores.
    pub bias: f64,
    pub uaff_precision: f64,
    pub uaff_f1: f64,
    pub naff_beta: f64,
    pub naff_f1: f64,
}

/// Evaluate scores against labels: threshold, point metrics, ROC-AUC,
/// affiliation, and the bias-corrected scores, in one report.
pub fn evaluate(
    scores: &[f64],
    labels: &[bool],
    opts: &EvalOptions,
) -> Result<MetricReport, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let gt_events = events_from_labels(labels);
    if gt_events.is_empty() {
        return Err(MetricsError::NoEvents);
    }

    let (threshold, threshold_mode) = match opts.threshold {
        ThresholdSpec::BestF1 => {
            let (thr, _) = best_f1_threshold(scores, labels)?;
            (thr, "best-f1".to_string())
        }
        ThresholdSpec::Quantile(q) => {
            if !(0.0..=1.0).contains(&q) {
                return Err(MetricsError::InvalidParameter(format!(
                    "threshold quantile {q} outside [0, 1]"
                )));
            }
            (quantile(scores, q), format!("quantile:{q}"))
        }
        ThresholdSpec::Value(v) => {
            if !v.is_finite() {
                return Err(MetricsError::InvalidParameter("non-finite threshold".into()));
            }
            (v, format!("value:{v}"))
        }
    };

    let pred = binarize(scores, threshold);
    let point = precision_recall_f1(&pred, labels);
    let pa = super::classical::f1_point_adjusted(&pred, labels);
    let correct = pred.iter().zip(labels).filter(|(p, g)| p == g).count();
    let accuracy = correct as f64 / labels.len() as f64;
    let auc = match roc_auc(scores, labels) {
        Ok(v) => Some(v),
        Err(MetricsError::SingleClass(_)) => None,
        Err(e) => return Err(e),
    };

    let pred_events = events_from_labels(&pred);
    let aff = affiliation(&pred_events, &gt_events, labels.len())?;

    let anomaly_ratio =
        labels.iter().filter(|&&g| g).count() as f64 / labels.len() as f64;
    let (bias, bias_mode) = match opts.bias {
        BiasSpec::Empirical { reps } => (
            empirical_bias(labels, reps, BIAS_THRESHOLD_Q, opts.seed)?,
            format!("empirical:{reps}"),
        ),
        BiasSpec::Ideal => (ideal_bias(anomaly_ratio), "ideal".to_string()),
        BiasSpec::Constant(b) => (b, format!("constant:{b}")),
    };

    let uaff = unbiased_affiliation(aff.precision, aff.recall, bias)?;
    let naff = normalized_affiliation(aff.precision, aff.recall, opts.naff_beta)?;

    Ok(MetricReport {
        n: labels.len(),
        anomaly_ratio,
        threshold,
        threshold_mode,
        accuracy,
        precision: point.precision,
        recall: point.recall,
        f1: point.f1,
        f1_pa: pa.f1,
        auc,
        aff_precision: aff.precision,
        aff_recall: aff.recall,
        aff_f1: aff.f1,
        aff_degenerate: aff.degenerate(),
        bias_mode,
        bias,
        uaff_precision: uaff.precision,
        uaff_f1: uaff.f1,
        naff_beta: opts.naff_beta,
        naff_f1: naff.f1,
    })
}
