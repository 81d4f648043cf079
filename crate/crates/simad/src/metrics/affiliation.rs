//! Affiliation metrics and their bias corrections.
//!
//! The series `[0, n)` is partitioned into one zone per ground-truth event by
//! cutting halfway between neighboring events. Within a zone, a predicted
//! point is scored by the *survival* of its distance to the event: the
//! fraction of zone timestamps at least as far from the event as the
//! prediction. Event points are scored symmetrically by the survival of
//! their distance to the nearest in-zone prediction. Averaging gives a
//! precision/recall pair that is threshold-free and distance-aware, but NOT
//! centered: a uniform-random scorer earns about 0.5 precision, more when
//! events are wide. The unbiased/normalized variants below subtract that
//! baseline out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::classical::{binarize, quantile};
use super::{events_from_labels, MetricsError};

/// Zone partition of `[0, n)` induced by a ground-truth event set, with
/// per-zone distance tables reused across evaluations of many prediction
/// sets against the same labels.
pub struct Zones {
    n: usize,
    zones: Vec<Zone>,
}

struct Zone {
    start: usize,
    end: usize,
    event: (usize, usize),
    /// Distance from each zone timestamp to the event, sorted ascending.
    sorted_dists: Vec<usize>,
}

/// Distance from timestamp `x` to the half-open interval `[s, e)`: 0 inside,
/// else steps to the nearest member.
fn dist_to_event(x: usize, (s, e): (usize, usize)) -> usize {
    if x < s {
        s - x
    } else if x >= e {
        x - e + 1
    } else {
        0
    }
}

impl Zone {
    /// Fraction of zone timestamps at distance >= `d` from the event.
    fn survival(&self, d: usize) -> f64 {
        let below = self.sorted_dists.partition_point(|&x| x < d);
        (self.sorted_dists.len() - below) as f64 / self.sorted_dists.len() as f64
    }

    /// Fraction of zone timestamps at absolute distance >= `d` from point
    /// `y` (which lies inside the zone).
    fn survival_around(&self, y: usize, d: usize) -> f64 {
        let (a, b) = (self.start as i64, self.end as i64);
        let (y, d) = (y as i64, d as i64);
        let lo = (y - d + 1).max(a);
        let hi = (y + d).min(b);
        let within = (hi - lo).max(0);
        ((b - a) - within) as f64 / (b - a) as f64
    }
}

impl Zones {
    /// Build zones from a sorted, disjoint, in-bounds event set. Cut points
    /// fall halfway between an event's last point and the next event's first
    /// point; an equidistant timestamp joins the earlier zone.
    pub fn new(gt_events: &[(usize, usize)], n: usize) -> Result<Zones, MetricsError> {
        if n == 0 {
            return Err(MetricsError::EmptySeries);
        }
        if gt_events.is_empty() {
            return Err(MetricsError::NoEvents);
        }
        for (i, &(s, e)) in gt_events.iter().enumerate() {
            if s >= e || e > n {
                return Err(MetricsError::InvalidParameter(format!(
                    "event [{s}, {e}) is empty or out of bounds for length {n}"
                )));
            }
            if i > 0 && gt_events[i - 1].1 > s {
                return Err(MetricsError::InvalidParameter(format!(
                    "events [{}, {}) and [{s}, {e}) are out of order or overlap",
                    gt_events[i - 1].0,
                    gt_events[i - 1].1
                )));
            }
        }

        let mut zones = Vec::with_capacity(gt_events.len());
        let mut start = 0;
        for (i, &event) in gt_events.iter().enumerate() {
            let end = if i + 1 == gt_events.len() {
                n
            } else {
                // first index of the next zone; ties go left
                (gt_events[i + 1].0 + event.1 - 1) / 2 + 1
            };
            let mut dists: Vec<usize> = (start..end).map(|t| dist_to_event(t, event)).collect();
            dists.sort_unstable();
            zones.push(Zone { start, end, event, sorted_dists: dists });
            start = end;
        }
        Ok(Zones { n, zones })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.n
    }

    /// Zone boundaries as half-open ranges, in order.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        self.zones.iter().map(|z| (z.start, z.end)).collect()
    }

    /// Score a prediction event set against these zones.
    pub fn score(&self, pred_events: &[(usize, usize)]) -> AffiliationScore {
        let mut precision_sum = 0.0;
        let mut zones_with_predictions = 0usize;
        let mut recall_sum = 0.0;

        for zone in &self.zones {
            // predicted timestamps clipped to this zone
            let mut points: Vec<usize> = Vec::new();
            for &(ps, pe) in pred_events {
                let s = ps.max(zone.start);
                let e = pe.min(zone.end);
                if s < e {
                    points.extend(s..e);
                }
            }
            if points.is_empty() {
                // no predictions affiliated with this event: zero recall
                // contribution, and the zone is excluded from precision
                continue;
            }
            zones_with_predictions += 1;

            let mut surv = 0.0;
            for &x in &points {
                surv += zone.survival(dist_to_event(x, zone.event));
            }
            precision_sum += surv / points.len() as f64;

            let (es, ee) = zone.event;
            let mut rec = 0.0;
            for y in es..ee {
                let d = nearest_distance(&points, y);
                rec += zone.survival_around(y, d);
            }
            recall_sum += rec / (ee - es) as f64;
        }

        let precision = if zones_with_predictions == 0 {
            0.0
        } else {
            precision_sum / zones_with_predictions as f64
        };
        let recall = recall_sum / self.zones.len() as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        AffiliationScore {
            precision,
            recall,
            f1,
            zones: self.zones.len(),
            zones_with_predictions,
        }
    }
}

/// Distance from `y` to the nearest element of a sorted, non-empty slice.
fn nearest_distance(sorted: &[usize], y: usize) -> usize {
    let i = sorted.partition_point(|&p| p < y);
    let mut best = usize::MAX;
    if i < sorted.len() {
        best = best.min(sorted[i] - y);
    }
    if i > 0 {
        best = best.min(y - sorted[i - 1]);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffiliationScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Total number of zones (== ground-truth events).
    pub zones: usize,
    /// Zones containing at least one predicted point. Zero means the
    /// prediction set was empty and the precision above is a filler 0.
    pub zones_with_predictions: usize,
}

impl AffiliationScore {
    /// True when no zone contained a prediction, leaving precision undefined
    /// (reported as 0).
    pub fn degenerate(&self) -> bool {
        self.zones_with_predictions == 0
    }
}

/// Affiliation precision/recall/F1 of a prediction event set against a
/// ground-truth event set over a series of length `n`.
pub fn affiliation(
    pred_events: &[(usize, usize)],
    gt_events: &[(usize, usize)],
    n: usize,
) -> Result<AffiliationScore, MetricsError> {
    Ok(Zones::new(gt_events, n)?.score(pred_events))
}

/// Closed-form affiliation-precision baseline of a uniform random scorer on
/// labels whose anomalous fraction is `ratio`, as a fraction in [0.5, 1].
pub fn ideal_bias(ratio: f64) -> f64 {
    assert!((0.0..=1.0).contains(&ratio), "anomaly ratio {ratio} outside [0, 1]");
    0.5 + 0.5 * ratio * ratio
}

/// Measured affiliation-precision baseline of a uniform random scorer on the
/// given labels: `reps` independent uniform score series are thresholded at
/// the `threshold_q` quantile and their affiliation precisions averaged.
/// Deterministic in `seed`; repetitions run in parallel.
pub fn empirical_bias(
    labels: &[bool],
    reps: usize,
    threshold_q: f64,
    seed: u64,
) -> Result<f64, MetricsError> {
    if reps == 0 {
        return Err(MetricsError::InvalidParameter("empirical bias needs reps >= 1".into()));
    }
    let zones = Zones::new(&events_from_labels(labels), labels.len())?;
    let per_rep: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let scores: Vec<f64> = (0..labels.len()).map(|_| rng.random::<f64>()).collect();
            let thr = quantile(&scores, threshold_q);
            let pred = events_from_labels(&binarize(&scores, thr));
            let score = zones.score(&pred);
            if score.degenerate() {
                None
            } else {
                Some(score.precision)
            }
        })
        .collect();
    let kept: Vec<f64> = per_rep.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(MetricsError::InvalidParameter(
            "every repetition produced an empty prediction set".into(),
        ));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// A bias-corrected affiliation precision and its signed F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasCorrected {
    pub precision: f64,
    pub f1: f64,
}

/// Rescale affiliation precision so the random-scorer baseline `baseline`
/// maps to 0 and perfect precision stays 1, then combine with recall into a
/// signed F1: negative corrected precision yields a negative F1 of the same
/// magnitude, marking performance below random.
pub fn unbiased_affiliation(
    aff_precision: f64,
    aff_recall: f64,
    baseline: f64,
) -> Result<BiasCorrected, MetricsError> {
    if !(0.0..1.0).contains(&baseline) {
        return Err(MetricsError::InvalidParameter(format!(
            "baseline precision {baseline} outside [0, 1)"
        )));
    }
    let precision = (aff_precision - baseline) / (1.0 - baseline);
    let mag = precision.abs();
    let f1 = if mag + aff_recall == 0.0 {
        0.0
    } else {
        let unsigned = 2.0 * mag * aff_recall / (mag + aff_recall);
        if precision < 0.0 {
            -unsigned
        } else {
            unsigned
        }
    };
    Ok(BiasCorrected { precision, f1 })
}

/// [`unbiased_affiliation`] against a fixed reference baseline (0.5 unless
/// there is a reason to choose otherwise), making scores comparable across
/// datasets with different label layouts.
pub fn normalized_affiliation(
    aff_precision: f64,
    aff_recall: f64,
    beta: f64,
) -> Result<BiasCorrected, MetricsError> {
    unbiased_affiliation(aff_precision, aff_recall, beta)
}
