//! Synthetic data: a labeled multi-channel sine series with injected
//! anomalies for desk-scale training and evaluation, plus benchmark label
//! tracks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::synthbench::{gen_labels, DemoSpec, SynthError};
use crate::tensor::{Elem, Tensor};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("could not place {requested} anomalies without overlap")]
    PlacementExhausted { requested: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineSpikeConfig {
    pub len: usize,
    pub channels: usize,
    pub noise_std: f64,
    /// Fraction of all timestamps made anomalous (they land in the second
    /// half only, so the first half stays clean for training).
    pub anomaly_ratio: f64,
    pub seed: u64,
}

impl Default for SineSpikeConfig {
    fn default() -> Self {
        SineSpikeConfig { len: 3000, channels: 2, noise_std: 0.05, anomaly_ratio: 0.05, seed: 0 }
    }
}

impl SineSpikeConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.len < 200 {
            return bad(format!("series of {} points is too short to carve up", self.len));
        }
        if self.channels == 0 {
            return bad("need at least one channel".into());
        }
        if !(self.anomaly_ratio > 0.0 && self.anomaly_ratio <= 0.2) {
            return bad(format!("anomaly ratio {} outside (0, 0.2]", self.anomaly_ratio));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be finite and >= 0", self.noise_std));
        }
        Ok(())
    }
}

/// A `[n, C]` series with per-timestamp labels and a clean/labeled split
/// point: rows before `split` carry no anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub values: Tensor,
    pub labels: Vec<bool>,
    pub split: usize,
}

impl LabeledSeries {
    /// The anomaly-free prefix, `[split, C]`.
    pub fn train_slice(&self) -> Tensor {
        let &[_, c] = self.values.shape() else { unreachable!() };
        Tensor::new(vec![self.split, c], self.values.data()[..self.split * c].to_vec())
    }

    /// The labeled suffix and its labels.
    pub fn eval_slice(&self) -> (Tensor, &[bool]) {
        let &[n, c] = self.values.shape() else { unreachable!() };
        let values =
            Tensor::new(vec![n - self.split, c], self.values.data()[self.split * c..].to_vec());
        (values, &self.labels[self.split..])
    }
}

const MAX_PLACEMENT_TRIES: usize = 1000;

/// Multi-channel sinusoids with noise, plus injected anomalies — point
/// spikes, level shifts, and high-frequency bursts — confined to the second
/// half of the series. The anomalous timestamp count is exactly
/// `round(len * anomaly_ratio)`.
pub fn sine_spike(cfg: &SineSpikeConfig) -> Result<LabeledSeries, DatagenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.len;
    let c = cfg.channels;

    let mut data = vec![0.0 as Elem; n * c];
    for t in 0..n {
        for ch in 0..c {
            let period = 90.0 + 14.0 * ch as f64;
            let phase = 0.9 * ch as f64;
            let slow = (std::f64::consts::TAU * t as f64 / period + phase).sin();
            let fast = 0.4 * (std::f64::consts::TAU * t as f64 / (period / 3.7) + 2.0 * phase).sin();
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_std;
            data[t * c + ch] = (slow + fast + noise) as Elem;
        }
    }

    let split = n / 2;
    let budget = (n as f64 * cfg.anomaly_ratio).round() as usize;
    let mut labels = vec![false; n];

    // segments take roughly 40% of the budget, point spikes the rest
    let segment_budget = (budget as f64 * 0.4).round() as usize;
    let mut placed = 0usize;
    while placed < segment_budget {
        let want = (segment_budget - placed).min(20);
        let len = if want < 12 { want } else { rng.random_range(12..=want) };
        let start = place_free(&labels, split, n, len, &mut rng)
            .ok_or(DatagenError::PlacementExhausted { requested: budget })?;
        let shift = rng.random_bool(0.5);
        for ch in 0..c {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amp = 1.5 + rng.random::<f64>();
            let burst_phase = 0.5 * ch as f64;
            for t in start..start + len {
                let v = &mut data[t * c + ch];
                if shift {
                    *v += (sign * amp) as Elem;
                } else {
                    let wobble =
                        (std::f64::consts::TAU * t as f64 / 3.0 + burst_phase).sin();
                    *v += (sign * (amp + 0.5) * wobble) as Elem;
                }
            }
        }
        for t in start..start + len {
            labels[t] = true;
        }
        placed += len;
    }

    while placed < budget {
        let t = place_free(&labels, split, n, 1, &mut rng)
            .ok_or(DatagenError::PlacementExhausted { requested: budget })?;
        for ch in 0..c {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let spike = 2.5 + 1.5 * rng.random::<f64>();
            data[t * c + ch] += (sign * spike) as Elem;
        }
        labels[t] = true;
        placed += 1;
    }

    Ok(LabeledSeries { values: Tensor::new(vec![n, c], data), labels, split })
}

/// A start in `[lo, hi - len]` whose `[start, start+len)` range, padded by
/// one point on each side, touches no labeled timestamp.
fn place_free(
    labels: &[bool],
    lo: usize,
    hi: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    for _ in 0..MAX_PLACEMENT_TRIES {
        let start = rng.random_range(lo..=hi - len);
        let guard_lo = start.saturating_sub(1);
        let guard_hi = (start + len + 1).min(hi);
        if labels[guard_lo..guard_hi].iter().all(|&l| !l) {
            return Some(start);
        }
    }
    None
}

/// The labels of one benchmark demo track, freshly drawn under the seed.
pub fn demo_labels(demo: usize, seed: u64) -> Result<Vec<bool>, DatagenError> {
    let spec = DemoSpec::demo(demo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gen_labels(&spec, &mut rng)?)
}
