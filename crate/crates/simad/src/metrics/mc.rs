//! Monte-Carlo reference estimates of the affiliation metrics.
//!
//! Deliberately written against the definitions rather than the closed-form
//! code in [`super::affiliation`]: zone membership is rederived locally,
//! survival fractions are estimated by sampling zone timestamps, and
//! predictions come in as raw labels. Tests compare the exact implementation
//! to these estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct McAffiliation {
    pub precision: f64,
    pub recall: f64,
}

fn dist(x: i64, (s, e): (usize, usize)) -> i64 {
    let (s, e) = (s as i64, e as i64);
    if x < s {
        s - x
    } else if x >= e {
        x - e + 1
    } else {
        0
    }
}

/// Estimate affiliation precision/recall by drawing `samples_per_zone`
/// uniform timestamps in every zone.
pub fn mc_affiliation(
    pred: &[bool],
    gt_events: &[(usize, usize)],
    n: usize,
    samples_per_zone: usize,
    seed: u64,
) -> McAffiliation {
    assert!(!gt_events.is_empty() && n > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // zone bounds: cut where the next event becomes strictly closer
    let mut bounds = Vec::with_capacity(gt_events.len() + 1);
    bounds.push(0usize);
    for w in gt_events.windows(2) {
        let (prev, next) = (w[0], w[1]);
        let mut cut = prev.1;
        while cut < next.0 && dist(cut as i64, prev) <= dist(cut as i64, next) {
            cut += 1;
        }
        bounds.push(cut);
    }
    bounds.push(n);

    let mut precision_sum = 0.0;
    let mut zones_with_preds = 0usize;
    let mut recall_sum = 0.0;

    for (zi, &event) in gt_events.iter().enumerate() {
        let (a, b) = (bounds[zi], bounds[zi + 1]);
        let points: Vec<usize> = (a..b).filter(|&t| pred[t]).collect();

        let mut samples: Vec<usize> = (0..samples_per_zone).map(|_| rng.random_range(a..b)).collect();
        samples.sort_unstable();

        if points.is_empty() {
            continue;
        }
        zones_with_preds += 1;

        // precision: mean over predicted points of P[dist(Z) >= dist(x)]
        let mut surv = 0.0;
        for &x in &points {
            let d = dist(x as i64, event);
            let hits = samples.iter().filter(|&&z| dist(z as i64, event) >= d).count();
            surv += hits as f64 / samples.len() as f64;
        }
        precision_sum += surv / points.len() as f64;

        // recall: mean over event points of P[|Z - y| >= d_min(y)]
        let mut rec = 0.0;
        for y in event.0..event.1 {
            let d = points.iter().map(|&p| p.abs_diff(y)).min().unwrap();
            let hits = samples.iter().filter(|&&z| z.abs_diff(y) >= d).count();
            rec += hits as f64 / samples.len() as f64;
        }
        recall_sum += rec / (event.1 - event.0) as f64;
    }

    McAffiliation {
        precision: if zones_with_preds == 0 { 0.0 } else { precision_sum / zones_with_preds as f64 },
        recall: recall_sum / gt_events.len() as f64,
    }
}
