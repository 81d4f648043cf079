//! The anomaly-detection network: patch feature extractor, an encoder stack
//! whose attention values come from learned embedding tables rather than the
//! input, a reconstruction head, and a projection head for the contrastive
//! objective.
//!
//! Parameters live in a flat, named tensor list ([`ModelState`]) so the
//! optimizer and the checkpoint format can treat them uniformly; a
//! [`forward::BoundModel`] binds them to a [`Tape`] for one differentiable
//! pass. Preprocessing (per-window channel normalization, positional offsets,
//! patch reshaping) happens outside the tape: no gradient ever reaches the
//! raw input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Elem, Tensor};

pub mod forward;
pub mod score;

pub use forward::{contrast_loss, dissimilarity, BoundModel, Branch, LossTerms};
pub use score::{anomaly_score, interpolate_patch_values, replicate_patch_values, ScoreSeries};

/// Epsilon inside every layer norm.
pub const LN_EPS: Elem = 1e-5;
/// Epsilon stabilizing per-channel window normalization.
pub const IN_EPS: f64 = 1e-5;
/// Guard for cosine terms against zero vectors.
pub const COS_EPS: Elem = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("window shape {got:?} does not match configured {want:?}")]
    WindowShape { got: Vec<usize>, want: Vec<usize> },
    #[error("checkpoint parameters do not match config: {0}")]
    ParamMismatch(String),
}

/// Architecture hyperparameters. `window_len` is the number of timestamps
/// per window, `patch_len` how many of them form one patch, so the encoder
/// sees `window_len / patch_len` tokens of width `patch_len * channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub window_len: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Rows in each learned value-embedding table; the value matrix selects
    /// `patch_count()` rows' worth of mixture from these.
    pub embed_count: usize,
    pub proj_dim: usize,
    /// Scale of the Gaussian noise added to the denoising branch.
    pub noise_alpha: f64,
    /// Spread the per-patch similarity score over timestamps by linear
    /// interpolation between patch centers instead of replication.
    #[serde(default)]
    pub interpolate_scores: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window_len: 2048,
            channels: 1,
            patch_len: 32,
            hidden_dim: 512,
            heads: 8,
            layers: 8,
            embed_count: 1000,
            proj_dim: 128,
            noise_alpha: 0.1,
            interpolate_scores: false,
        }
    }
}

impl ModelConfig {
    /// Tokens per window, `M`.
    pub fn patch_count(&self) -> usize {
        self.window_len / self.patch_len
    }

    /// Flattened width of one patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_len * self.channels
    }

    /// Per-head width, `hidden_dim / heads` rounded down.
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.window_len == 0
            || self.channels == 0
            || self.patch_len == 0
            || self.hidden_dim == 0
            || self.heads == 0
            || self.layers == 0
            || self.embed_count == 0
            || self.proj_dim == 0
        {
            return bad("all dimensions must be nonzero".into());
        }
        if self.window_len % self.patch_len != 0 {
            return bad(format!(
                "window_len {} is not a multiple of patch_len {}",
                self.window_len, self.patch_len
            ));
        }
        if self.heads > self.hidden_dim {
            return bad(format!(
                "heads {} exceed hidden_dim {}",
                self.heads, self.hidden_dim
            ));
        }
        if self.embed_count < self.patch_count() {
            return bad(format!(
                "embed_count {} is below the patch count {}",
                self.embed_count,
                self.patch_count()
            ));
        }
        if !self.noise_alpha.is_finite() || self.noise_alpha < 0.0 {
            return bad(format!("noise_alpha {} must be finite and >= 0", self.noise_alpha));
        }
        Ok(())
    }

    /// The small profile used throughout the test suite: big enough to have
    /// two layers and two heads, small enough for exhaustive gradient checks.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            window_len: 16,
            channels: 2,
            patch_len: 4,
            hidden_dim: 8,
            heads: 2,
            layers: 2,
            embed_count: 8,
            proj_dim: 4,
            noise_alpha: 0.1,
            interpolate_scores: false,
        }
    }
}

/// Index pair of a linear map in the flat parameter list.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: usize,
    pub b: usize,
}

/// Index pair of a layer-norm parameter set.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIds {
    /// Learned value table, `embed_count x head_dim`.
    pub embed: usize,
    /// Row-selection map, `patch_count x embed_count`.
    pub select: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIds {
    pub w_q: usize,
    pub w_k: usize,
    pub heads: Vec<HeadIds>,
    pub merge: LinearIds,
    pub ln_attn: NormIds,
    pub ffn_in: LinearIds,
    pub ffn_out: LinearIds,
    pub ln_ffn: NormIds,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub ln_pre: NormIds,
    pub value_embed: LinearIds,
    pub ln_post: NormIds,
    pub layers: Vec<LayerIds>,
    pub rec: LinearIds,
    pub proj_in: LinearIds,
    pub proj_out: LinearIds,
}

struct ParamBuilder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl ParamBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIds {
        LinearIds {
            w: self.push(format!("{prefix}.w"), vec![fan_in, fan_out]),
            b: self.push(format!("{prefix}.b"), vec![fan_out]),
        }
    }

    fn norm(&mut self, prefix: &str, width: usize) -> NormIds {
        NormIds {
            gain: self.push(format!("{prefix}.gain"), vec![width]),
            bias: self.push(format!("{prefix}.bias"), vec![width]),
        }
    }
}

/// The deterministic parameter inventory of a config: names, shapes, and the
/// typed index map used by the forward pass.
fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<String>, Vec<Vec<usize>>) {
    let (m, pc, d) = (cfg.patch_count(), cfg.patch_dim(), cfg.hidden_dim);
    let (u, hd, v) = (cfg.heads, cfg.head_dim(), cfg.embed_count);
    let mut b = ParamBuilder { names: Vec::new(), shapes: Vec::new() };

    let ln_pre = b.norm("extract.ln_pre", pc);
    let value_embed = b.linear("extract.value", pc, d);
    let ln_post = b.norm("extract.ln_post", d);

    let layers = (0..cfg.layers)
        .map(|i| {
            let p = format!("layer{i}");
            let w_q = b.push(format!("{p}.w_q"), vec![d, u * hd]);
            let w_k = b.push(format!("{p}.w_k"), vec![d, u * hd]);
            let heads = (0..u)
                .map(|k| HeadIds {
                    embed: b.push(format!("{p}.head{k}.embed"), vec![v, hd]),
                    select: b.push(format!("{p}.head{k}.select"), vec![m, v]),
                })
                .collect();
            LayerIds {
                w_q,
                w_k,
                heads,
                merge: b.linear(&format!("{p}.merge"), u * hd, d),
                ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                ffn_in: b.linear(&format!("{p}.ffn_in"), d, 4 * d),
                ffn_out: b.linear(&format!("{p}.ffn_out"), 4 * d, d),
                ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
            }
        })
        .collect();

    let rec = b.linear("head.rec", d, pc);
    let proj_in = b.linear("head.proj_in", d, d);
    let proj_out = b.linear("head.proj_out", d, cfg.proj_dim);

    let layout = Layout { ln_pre, value_embed, ln_post, layers, rec, proj_in, proj_out };
    (layout, b.names, b.shapes)
}

/// A model: config plus the flat list of named parameter tensors. Immutable
/// during inference (safe to share across threads for parallel scoring);
/// training mutates `tensors_mut()` in place.
#[derive(Debug, Clone)]
pub struct ModelState {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    positional: Tensor,
    layout: Layout,
}

impl ModelState {
    /// Fresh model with uniform Glorot weights, zero biases, and unit
    /// layer-norm gains, drawn deterministically from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<ModelState, ModelError> {
        config.validate()?;
        let (layout, names, shapes) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = names
            .iter()
            .zip(&shapes)
            .map(|(name, shape)| init_tensor(name, shape, &mut rng))
            .collect();
        let positional = positional_table(&config);
        Ok(ModelState { config, names, tensors, positional, layout })
    }

    /// Rebuild a model from checkpointed `(name, tensor)` entries, verifying
    /// the inventory matches the config exactly.
    pub fn from_entries(
        config: ModelConfig,
        entries: Vec<(String, Tensor)>,
    ) -> Result<ModelState, ModelError> {
        config.validate()?;
        let (layout, names, shapes) = build_layout(&config);
        if entries.len() != names.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, found {}",
                names.len(),
                entries.len()
            )));
        }
        let mut tensors = Vec::with_capacity(entries.len());
        for ((name, tensor), (want_name, want_shape)) in
            entries.into_iter().zip(names.iter().zip(&shapes))
        {
            if &name != want_name {
                return Err(ModelError::ParamMismatch(format!(
                    "expected tensor {want_name:?}, found {name:?}"
                )));
            }
            if tensor.shape() != &want_shape[..] {
                return Err(ModelError::ParamMismatch(format!(
                    "tensor {name:?} has shape {:?}, expected {want_shape:?}",
                    tensor.shape()
                )));
            }
            tensors.push(tensor);
        }
        let positional = positional_table(&config);
        Ok(ModelState { config, names, tensors, positional, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sinusoidal offset table in patched shape, `patch_count x patch_dim`.
    /// Deterministic from the config and never trained or checkpointed.
    pub fn positional(&self) -> &Tensor {
        &self.positional
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn param_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Validate a raw window batch shape `[B, window_len, channels]` (or a
    /// single window `[window_len, channels]`).
    pub fn check_window(&self, x: &Tensor) -> Result<(), ModelError> {
        let want = vec![self.config.window_len, self.config.channels];
        let got = x.shape();
        let ok = match got.len() {
            2 => got == want,
            3 => got[1..] == want[..],
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::WindowShape { got: got.to_vec(), want })
        }
    }

    /// Preprocess a raw window batch `[B, T, C]` into the encoder's input
    /// space `[B, M, P*C]`: per-window channel normalization, positional
    /// offsets, patch reshape. Pure data movement plus arithmetic; not
    /// differentiated.
    pub fn prepare(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_window(x)?;
        let batched = promote_batch(x, self.config.window_len, self.config.channels);
        let normalized = instance_normalize(&batched).values;
        let with_pos = add_positional(&normalized, &self.positional);
        Ok(patch(&with_pos, self.config.patch_len))
    }
}

fn init_tensor(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    if name.ends_with(".gain") {
        return Tensor::filled(shape.to_vec(), 1.0);
    }
    if name.ends_with(".bias") || name.ends_with(".b") {
        return Tensor::zeros(shape.to_vec());
    }
    // weight matrices and embedding tables: uniform Glorot over the two dims
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * limit) as Elem)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// View a window or window batch uniformly as `[B, T, C]`.
fn promote_batch(x: &Tensor, t: usize, c: usize) -> Tensor {
    if x.rank() == 2 {
        x.clone().reshape(vec![1, t, c])
    } else {
        x.clone()
    }
}

/// Result of per-window channel normalization: the normalized values plus the
/// per-window, per-channel mean and standard deviation that produced them.
#[derive(Debug, Clone)]
pub struct Normalized {
    /// Same shape as the input.
    pub values: Tensor,
    /// `[B, C]` channel means.
    pub mean: Tensor,
    /// `[B, C]` eps-stabilized channel standard deviations.
    pub std: Tensor,
}

/// Normalize each channel of each window to mean 0 and standard deviation 1
/// over the time axis. Accepts `[T, C]` or `[B, T, C]`. A constant channel
/// maps to zeros (the eps keeps the divisor finite).
pub fn instance_normalize(x: &Tensor) -> Normalized {
    let (b, t, c) = match *x.shape() {
        [t, c] => (1, t, c),
        [b, t, c] => (b, t, c),
        ref s => panic!("instance_normalize expects rank 2 or 3, got {s:?}"),
    };
    let mut values = vec![0.0 as Elem; x.numel()];
    let mut mean = vec![0.0 as Elem; b * c];
    let mut std = vec![0.0 as Elem; b * c];
    let data = x.data();
    for w in 0..b {
        for ch in 0..c {
            let at = |ti: usize| data[(w * t + ti) * c + ch] as f64;
            let mu = (0..t).map(at).sum::<f64>() / t as f64;
            let var = (0..t).map(|ti| (at(ti) - mu).powi(2)).sum::<f64>() / t as f64;
            let sigma = (var + IN_EPS).sqrt();
            mean[w * c + ch] = mu as Elem;
            std[w * c + ch] = sigma as Elem;
            for ti in 0..t {
                values[(w * t + ti) * c + ch] = ((at(ti) - mu) / sigma) as Elem;
            }
        }
    }
    Normalized {
        values: Tensor::new(x.shape().to_vec(), values),
        mean: Tensor::new(vec![b, c], mean),
        std: Tensor::new(vec![b, c], std),
    }
}

/// Sinusoidal positional offsets for temporal positions, already reshaped to
/// the patched layout `[patch_count, patch_dim]`: entry for timestamp `t`,
/// channel `c` is `sin(t / 10000^(c/C))` for even `c` and the matching
/// cosine for odd `c`.
pub fn positional_table(cfg: &ModelConfig) -> Tensor {
    let (t_len, c_len) = (cfg.window_len, cfg.channels);
    let mut data = vec![0.0 as Elem; t_len * c_len];
    for t in 0..t_len {
        for c in 0..c_len {
            let pair = (c / 2) * 2;
            let rate = 10000f64.powf(pair as f64 / c_len as f64);
            let angle = t as f64 / rate;
            data[t * c_len + c] =
                if c % 2 == 0 { angle.sin() as Elem } else { angle.cos() as Elem };
        }
    }
    Tensor::new(vec![t_len, c_len], data).reshape(vec![cfg.patch_count(), cfg.patch_dim()])
}

/// Add the positional table (patched layout) to a `[B, T, C]` batch.
fn add_positional(x: &Tensor, table: &Tensor) -> Tensor {
    let shape = x.shape().to_vec();
    let b = shape[0];
    let mut out = x.data().to_vec();
    let per = table.numel();
    for w in 0..b {
        for (o, &p) in out[w * per..(w + 1) * per].iter_mut().zip(table.data()) {
            *o += p;
        }
    }
    Tensor::new(shape, out)
}

/// Reshape windows into patches: `[B, T, C]` → `[B, T/P, P*C]` (or the
/// unbatched equivalent). Row-major layout makes this a pure reshape: patch
/// `m` holds timestamps `[m*P, (m+1)*P)` in time order, channels contiguous
/// per timestamp.
pub fn patch(x: &Tensor, patch_len: usize) -> Tensor {
    match *x.shape() {
        [t, c] => {
            assert!(t % patch_len == 0, "window length {t} not a multiple of patch length {patch_len}");
            x.clone().reshape(vec![t / patch_len, patch_len * c])
        }
        [b, t, c] => {
            assert!(t % patch_len == 0, "window length {t} not a multiple of patch length {patch_len}");
            x.clone().reshape(vec![b, t / patch_len, patch_len * c])
        }
        ref s => panic!("patch expects rank 2 or 3, got {s:?}"),
    }
}

/// Inverse of [`patch`].
pub fn unpatch(x: &Tensor, patch_len: usize, channels: usize) -> Tensor {
    match *x.shape() {
        [m, pc] => {
            assert!(pc == patch_len * channels, "patch dim {pc} != {patch_len}*{channels}");
            x.clone().reshape(vec![m * patch_len, channels])
        }
        [b, m, pc] => {
            assert!(pc == patch_len * channels, "patch dim {pc} != {patch_len}*{channels}");
            x.clone().reshape(vec![b, m * patch_len, channels])
        }
        ref s => panic!("unpatch expects rank 2 or 3, got {s:?}"),
    }
}

/// The noisy branch's input: `x + alpha * J` with `J` i.i.d. standard
/// normal. Applied to the raw window, before normalization.
pub fn noise_augment(x: &Tensor, alpha: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let j: f64 = StandardNormal.sample(rng);
            v + (alpha * j) as Elem
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}
