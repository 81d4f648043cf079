//! Point-based metrics: precision/recall/F1, the point-adjusted variant, the
//! best-F1 threshold search, and ROC-AUC via the Mann-Whitney statistic.

use super::{events_from_labels, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Predicted labels under a threshold; a point is flagged when
/// `score >= threshold`.
pub fn binarize(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

/// Precision, recall and F1 with the zero-denominator convention: an
/// undefined ratio is reported as 0.
pub fn precision_recall_f1(pred: &[bool], gt: &[bool]) -> Prf1 {
    assert_eq!(
        pred.len(),
        gt.len(),
        "prediction and label lengths differ: {} vs {}",
        pred.len(),
        gt.len()
    );
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 { precision, recall, f1 }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Point adjustment: any ground-truth event containing at least one predicted
/// point is credited in full (every point of the event is marked predicted);
/// predictions outside events are left untouched.
pub fn point_adjust(pred: &[bool], gt: &[bool]) -> Vec<bool> {
    assert_eq!(pred.len(), gt.len());
    let mut adjusted = pred.to_vec();
    for (s, e) in events_from_labels(gt) {
        if pred[s..e].iter().any(|&p| p) {
            for a in &mut adjusted[s..e] {
                *a = true;
            }
        }
    }
    adjusted
}

/// F1 after point adjustment. Never below the plain F1 of the same inputs.
pub fn f1_point_adjusted(pred: &[bool], gt: &[bool]) -> Prf1 {
    precision_recall_f1(&point_adjust(pred, gt), gt)
}

/// Linear-interpolation quantile (the common "type 7" estimate) of `q` in
/// [0, 1] over the values of `xs`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level {q} outside [0, 1]");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile input"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Maximum number of candidate thresholds scanned by the best-F1 search.
/// Below this many distinct scores the scan is exhaustive; above it the
/// candidates are evenly spaced quantiles of the score distribution.
const MAX_THRESHOLD_CANDIDATES: usize = 256;

/// Threshold maximizing F1 of `score >= threshold`, and that F1. Among tied
/// candidates the lowest threshold wins.
pub fn best_f1_threshold(scores: &[f64], gt: &[bool]) -> Result<(f64, f64), MetricsError> {
    if scores.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: gt.len() });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    if candidates.len() > MAX_THRESHOLD_CANDIDATES {
        let mut qs = Vec::with_capacity(MAX_THRESHOLD_CANDIDATES);
        for i in 0..MAX_THRESHOLD_CANDIDATES {
            qs.push(quantile(scores, i as f64 / (MAX_THRESHOLD_CANDIDATES - 1) as f64));
        }
        qs.dedup();
        candidates = qs;
    }
    let mut best = (candidates[0], -1.0);
    for &thr in &candidates {
        let f1 = precision_recall_f1(&binarize(scores, thr), gt).f1;
        if f1 > best.1 {
            best = (thr, f1);
        }
    }
    Ok((best.0, best.1))
}

/// ROC-AUC computed from the Mann-Whitney U statistic with average ranks for
/// tied scores. Requires both classes to be present.
pub fn roc_auc(scores: &[f64], gt: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: gt.len() });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let n_pos = gt.iter().filter(|&&g| g).count();
    let n_neg = gt.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass("ROC-AUC"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Walk tie groups, assigning each member the group's average rank.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based: group spans ranks i+1 ..= j
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if gt[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prf1_known_counts() {
        let pred = [true, true, false, false];
        let gt = [true, false, true, false];
        let m = precision_recall_f1(&pred, &gt);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
    }

    #[test]
    fn prf1_zero_denominators_are_zero() {
        // no predictions at all
        let m = precision_recall_f1(&[false, false], &[true, false]);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        // no ground truth positives
        let m = precision_recall_f1(&[true, false], &[false, false]);
        assert_eq!((m.recall, m.f1), (0.0, 0.0));
    }

    #[test]
    fn point_adjust_credits_whole_event() {
        let gt = [false, true, true, true, false, true];
        let pred = [false, false, true, false, false, false];
        let adj = point_adjust(&pred, &gt);
        assert_eq!(adj, vec![false, true, true, true, false, false]);
    }

    #[test]
    fn point_adjust_keeps_false_positives() {
        let gt = [false, true, false];
        let pred = [true, true, false];
        let adj = point_adjust(&pred, &gt);
        assert_eq!(adj, vec![true, true, false]);
    }

    #[test]
    fn point_adjust_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = 64;
            let gt: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
            let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
            let once = point_adjust(&pred, &gt);
            assert_eq!(point_adjust(&once, &gt), once);
        }
    }

    #[test]
    fn auc_simple_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let gt = [false, false, true, true];
        let auc = roc_auc(&scores, &gt).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_perfect_and_inverted() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let gt = [false, false, true, true];
        assert!((roc_auc(&scores, &gt).unwrap() - 1.0).abs() < 1e-12);
        let inv = [false, false, true, true];
        let rev: Vec<f64> = scores.iter().map(|s| -s).collect();
        assert!(roc_auc(&rev, &inv).unwrap().abs() < 1e-12);
    }

    #[test]
    fn auc_all_tied_scores_is_half() {
        let scores = [0.5; 6];
        let gt = [true, false, true, false, false, true];
        assert!((roc_auc(&scores, &gt).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_single_class_is_rejected() {
        assert_eq!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass("ROC-AUC"))
        );
    }

    /// Trapezoidal ROC integration, sweeping grouped score values. Used as an
    /// independent reference for the rank-based computation.
    fn auc_trapezoid(scores: &[f64], gt: &[bool]) -> f64 {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let np = gt.iter().filter(|&&g| g).count() as f64;
        let nn = gt.len() as f64 - np;
        let mut auc = 0.0;
        let (mut tp, mut fp) = (0.0f64, 0.0f64);
        let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j < order.len() && scores[order[j]] == scores[order[i]] {
                if gt[order[j]] {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
                j += 1;
            }
            let tpr = tp / np;
            let fpr = fp / nn;
            auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
            prev_tpr = tpr;
            prev_fpr = fpr;
            i = j;
        }
        auc
    }

    #[test]
    fn auc_matches_trapezoid_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..200 {
            let n = rng.random_range(2..120);
            // draw from a small value set to force plenty of ties
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.random_range(0..8) as f64) / 7.0).collect();
            let mut gt: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            if gt.iter().all(|&g| g) {
                gt[0] = false;
            }
            if gt.iter().all(|&g| !g) {
                gt[0] = true;
            }
            let a = roc_auc(&scores, &gt).unwrap();
            let b = auc_trapezoid(&scores, &gt);
            assert!((a - b).abs() < 1e-10, "round {round}: ranks {a} vs trapezoid {b}");
        }
    }

    /// Exhaustive best-F1 reference: scan every distinct score.
    fn best_f1_exhaustive(scores: &[f64], gt: &[bool]) -> (f64, f64) {
        let mut cands: Vec<f64> = scores.to_vec();
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cands.dedup();
        let mut best = (cands[0], -1.0);
        for &thr in &cands {
            let f1 = precision_recall_f1(&binarize(scores, thr), gt).f1;
            if f1 > best.1 {
                best = (thr, f1);
            }
        }
        best
    }

    #[test]
    fn best_f1_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let n = rng.random_range(5..50);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut gt: Vec<bool> = (0..n).map(|_| rng.random_bool(0.25)).collect();
            if gt.iter().all(|&g| !g) {
                gt[n / 2] = true;
            }
            let (thr, f1) = best_f1_threshold(&scores, &gt).unwrap();
            let (ethr, ef1) = best_f1_exhaustive(&scores, &gt);
            assert_eq!(thr, ethr);
            assert_eq!(f1, ef1);
        }
    }

    #[test]
    fn best_f1_prefers_lower_threshold_on_ties() {
        // thresholds 0.2 and 0.4 give identical predictions on this input
        let scores = [0.1, 0.2, 0.4, 0.9];
        let gt = [false, true, true, true];
        let (thr, f1) = best_f1_threshold(&scores, &gt).unwrap();
        assert_eq!(thr, 0.2);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn best_f1_quantile_fallback_covers_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 5000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let gt: Vec<bool> = scores.iter().map(|&s| s > 0.9).collect();
        let (_, f1) = best_f1_threshold(&scores, &gt).unwrap();
        // labels are a deterministic function of the score, so a quantile
        // close to the true cut must recover a near-perfect F1
        assert!(f1 > 0.99, "quantile candidates missed an obvious cut: f1 = {f1}");
    }

    #[test]
    fn quantile_endpoints_and_midpoint() {
        let xs = [3.0, 1.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 3.0);
        assert_eq!(quantile(&xs, 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    proptest! {
        // Point adjustment can only turn predictions on inside true events,
        // so the adjusted F1 never falls below the plain F1.
        #[test]
        fn f1pa_never_below_f1(
            seeds in proptest::collection::vec(0u8..4, 8..80),
        ) {
            let gt: Vec<bool> = seeds.iter().map(|&v| v == 0).collect();
            let pred: Vec<bool> = seeds.iter().map(|&v| v % 2 == 1).collect();
            let plain = precision_recall_f1(&pred, &gt).f1;
            let adjusted = f1_point_adjusted(&pred, &gt).f1;
            prop_assert!(adjusted >= plain - 1e-12);
        }

        #[test]
        fn binarize_matches_definition(
            scores in proptest::collection::vec(0.0f64..1.0, 1..50),
            thr in 0.0f64..1.0,
        ) {
            let pred = binarize(&scores, thr);
            for (p, s) in pred.iter().zip(&scores) {
                prop_assert_eq!(*p, *s >= thr);
            }
        }
    }
}
