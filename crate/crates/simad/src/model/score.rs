//! Inference-time anomaly scoring: per-timestamp reconstruction error plus
//! the patch-level similarity deficit, spread back to timestamp resolution.

use rayon::prelude::*;

use crate::tensor::{Tape, Tensor};

use super::{unpatch, BoundModel, ModelError, ModelState, COS_EPS};

/// Per-timestamp anomaly scores of one window and their two components.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    /// `mse[t] + sim[t]`.
    pub total: Vec<f64>,
    /// Squared reconstruction error at each timestamp, mean over channels.
    pub mse: Vec<f64>,
    /// `1 - cosine` of the patch containing each timestamp, replicated (or
    /// interpolated) to timestamp resolution.
    pub sim: Vec<f64>,
}

impl ModelState {
    /// Score one raw window `[T, C]`: forward pass, then per-timestamp
    /// scores in the normalized space.
    pub fn score_window(&self, x: &Tensor) -> Result<ScoreSeries, ModelError> {
        let tape = Tape::new();
        let bound = BoundModel::bind(self, &tape);
        let prepared = self.prepare(x)?;
        let tokens = bound.encode(bound.extract(tape.constant(&prepared)));
        let x_hat_patched = bound.reconstruct(tokens).value();
        let cfg = self.config();
        let x_hat = unpatch(&x_hat_patched, cfg.patch_len, cfg.channels)
            .reshape(vec![cfg.window_len, cfg.channels]);
        let target = unpatch(&self.target(x)?, cfg.patch_len, cfg.channels)
            .reshape(vec![cfg.window_len, cfg.channels]);
        Ok(anomaly_score(&x_hat, &target, cfg.patch_len, cfg.interpolate_scores))
    }

    /// Score a whole `[n, C]` series, one score per timestamp: the series is
    /// split into non-overlapping windows, plus a final window aligned to the
    /// series end when the length is not a multiple; on the overlap the
    /// earlier window's scores win.
    pub fn score_series(&self, series: &Tensor) -> Result<ScoreSeries, ModelError> {
        let t_len = self.config().window_len;
        let c = self.config().channels;
        let &[n, got_c] = series.shape() else {
            return Err(ModelError::WindowShape {
                got: series.shape().to_vec(),
                want: vec![t_len, c],
            });
        };
        if got_c != c || n < t_len {
            return Err(ModelError::WindowShape {
                got: series.shape().to_vec(),
                want: vec![t_len, c],
            });
        }

        let mut starts: Vec<usize> = (0..=n - t_len).step_by(t_len).collect();
        if starts.last().unwrap() + t_len < n {
            starts.push(n - t_len);
        }
        let pieces = starts
            .par_iter()
            .map(|&s| {
                let window =
                    Tensor::new(vec![t_len, c], series.data()[s * c..(s + t_len) * c].to_vec());
                self.score_window(&window)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut out = ScoreSeries {
            total: vec![0.0; n],
            mse: vec![0.0; n],
            sim: vec![0.0; n],
        };
        // reversed so earlier windows overwrite the tail window's overlap
        for (&s, piece) in starts.iter().zip(&pieces).rev() {
            out.total[s..s + t_len].copy_from_slice(&piece.total);
            out.mse[s..s + t_len].copy_from_slice(&piece.mse);
            out.sim[s..s + t_len].copy_from_slice(&piece.sim);
        }
        Ok(out)
    }
}

/// Scores from a reconstruction and its target, both `[T, C]`: squared error
/// per timestamp (mean over channels) plus the similarity deficit of the
/// containing patch.
pub fn anomaly_score(
    x_hat: &Tensor,
    x: &Tensor,
    patch_len: usize,
    interpolate: bool,
) -> ScoreSeries {
    assert_eq!(
        x_hat.shape(),
        x.shape(),
        "anomaly_score shape mismatch: reconstruction {:?} vs target {:?}",
        x_hat.shape(),
        x.shape()
    );
    let &[t_len, c_len] = x.shape() else {
        panic!("anomaly_score expects rank 2 windows, got {:?}", x.shape())
    };
    assert!(
        t_len % patch_len == 0,
        "window length {t_len} not a multiple of patch length {patch_len}"
    );
    let (a, b) = (x_hat.data(), x.data());

    let mse: Vec<f64> = (0..t_len)
        .map(|t| {
            (0..c_len)
                .map(|c| {
                    let d = a[t * c_len + c] as f64 - b[t * c_len + c] as f64;
                    d * d
                })
                .sum::<f64>()
                / c_len as f64
        })
        .collect();

    let patches = t_len / patch_len;
    let width = patch_len * c_len;
    let deficits: Vec<f64> = (0..patches)
        .map(|m| {
            let lo = m * width;
            let hi = lo + width;
            let mut dot = 0.0f64;
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for i in lo..hi {
                dot += a[i] as f64 * b[i] as f64;
                na += (a[i] as f64).powi(2);
                nb += (b[i] as f64).powi(2);
            }
            // same zero-vector guard as the training-time cosine
            let cos = dot / (na.sqrt().max(COS_EPS as f64) * nb.sqrt().max(COS_EPS as f64));
            1.0 - cos
        })
        .collect();

    let sim = if interpolate {
        interpolate_patch_values(&deficits, patch_len)
    } else {
        replicate_patch_values(&deficits, patch_len)
    };
    let total = mse.iter().zip(&sim).map(|(m, s)| m + s).collect();
    ScoreSeries { total, mse, sim }
}

/// Spread one value per patch to timestamp resolution by repeating it
/// `patch_len` times.
pub fn replicate_patch_values(values: &[f64], patch_len: usize) -> Vec<f64> {
    values.iter().flat_map(|&v| std::iter::repeat(v).take(patch_len)).collect()
}

/// Spread one value per patch to timestamp resolution by linear
/// interpolation between patch centers, held constant before the first and
/// after the last center.
pub fn interpolate_patch_values(values: &[f64], patch_len: usize) -> Vec<f64> {
    let m = values.len();
    let center = |i: usize| (i * patch_len) as f64 + (patch_len as f64 - 1.0) / 2.0;
    (0..m * patch_len)
        .map(|t| {
            let t = t as f64;
            if m == 1 || t <= center(0) {
                values[0]
            } else if t >= center(m - 1) {
                values[m - 1]
            } else {
                let i = ((t - center(0)) / patch_len as f64).floor() as usize;
                let i = i.min(m - 2);
                let frac = (t - center(i)) / patch_len as f64;
                values[i] + frac * (values[i + 1] - values[i])
            }
        })
        .collect()
}
