//! Training loop: window sampling, the composite objective with its
//! contrastive warm-up, AdamW with cosine learning-rate decay, and a
//! per-iteration log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{noise_augment, BoundModel, ModelConfig, ModelError, ModelState};
use crate::tensor::{Elem, Tensor};


/// Training aborts when the contrastive term (which the objective subtracts,
/// so it is unbounded above) exceeds this.
pub const CONTRAST_GUARD: f64 = 1e4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("series of {len} timestamps cannot supply windows of {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("series shape {got:?} does not match [timestamps, {channels}]")]
    SeriesShape { got: Vec<usize>, channels: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged: {component} is {value}")]
    Diverged { component: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Windows drawn per epoch; an epoch runs `ceil(samples / batch_size)`
    /// iterations, the last batch smaller if they do not divide.
    pub samples_per_epoch: usize,
    /// Iterations over which the contrastive weight ramps up.
    pub warmup_iters: usize,
    pub beta_max: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 20,
            samples_per_epoch: 500,
            warmup_iters: 500,
            beta_max: 1.0,
            weight_decay: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return bad("batch_size and samples_per_epoch must be positive".into());
        }
        if self.warmup_iters == 0 {
            return bad("warmup_iters must be at least 1".into());
        }
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return bad(format!("beta_max {} must be finite and >= 0", self.beta_max));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and > 0", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be finite and >= 0", self.weight_decay));
        }
        Ok(())
    }
}

/// Contrastive weight at a 0-based iteration: `min((i+1)/warmup, beta_max)`.
pub fn beta_schedule(iteration: usize, cfg: &TrainConfig) -> f64 {
    ((iteration + 1) as f64 / cfg.warmup_iters as f64).min(cfg.beta_max)
}

/// Cosine decay from `lr_max` at iteration 0 to 0 at the final iteration.
pub fn cosine_lr(iteration: usize, total_iters: usize, lr_max: f64) -> f64 {
    assert!(iteration < total_iters, "iteration {iteration} outside schedule of {total_iters}");
    if total_iters == 1 {
        return lr_max;
    }
    let progress = iteration as f64 / (total_iters - 1) as f64;
    0.5 * lr_max * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// AdamW with decoupled weight decay. Moment buffers are kept in f64
/// regardless of the tensor element type.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Tensor], weight_decay: f64) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter set");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((param, grad), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v))
        {
            assert_eq!(param.numel(), grad.numel(), "gradient shaped unlike its parameter");
            let data = param.data_mut();
            for i in 0..data.len() {
                let g = grad.data()[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = data[i] as f64;
                data[i] =
                    (p - lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p)) as Elem;
            }
        }
    }
}

/// Uniformly random window start offsets over `[0, len - window_len]`.
pub fn sample_window_starts(
    len: usize,
    count: usize,
    window_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, TrainError> {
    if len < window_len {
        return Err(TrainError::SeriesTooShort { len, window: window_len });
    }
    Ok((0..count).map(|_| rng.random_range(0..=len - window_len)).collect())
}

/// Stack the windows at the given starts into a `[count, window_len, C]`
/// batch.
pub fn gather_windows(series: &Tensor, starts: &[usize], window_len: usize) -> Tensor {
    let &[len, c] = series.shape() else {
        panic!("gather_windows expects a [timestamps, channels] series, got {:?}", series.shape())
    };
    let mut data = Vec::with_capacity(starts.len() * window_len * c);
    for &s in starts {
        assert!(s + window_len <= len, "window at {s} overruns series of {len}");
        data.extend_from_slice(&series.data()[s * c..(s + window_len) * c]);
    }
    Tensor::new(vec![starts.len(), window_len, c], data)
}

/// The scalar values of one composite-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub reconstruction: f64,
    pub denoise: f64,
    pub contrast: f64,
    pub total: f64,
}

/// The first diverged component of a loss breakdown, if any: a non-finite
/// value anywhere, or a contrastive term past [`CONTRAST_GUARD`].
pub fn diverged_component(v: &LossValues) -> Option<(&'static str, f64)> {
    let checks = [
        ("reconstruction loss", v.reconstruction),
        ("denoising loss", v.denoise),
        ("contrastive loss", v.contrast),
        ("total loss", v.total),
    ];
    for (component, value) in checks {
        if !value.is_finite() {
            return Some((component, value));
        }
    }
    if v.contrast > CONTRAST_GUARD {
        return Some(("contrastive loss (guard)", v.contrast));
    }
    None
}

/// Evaluate the composite objective on one window batch without touching
/// parameters: samples the noisy branch from `rng`, returns the breakdown,
/// and reports divergence instead of propagating non-finite values.
pub fn total_loss(
    model: &ModelState,
    windows: &Tensor,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossValues, TrainError> {
    let tape = crate::tensor::Tape::new();
    let bound = BoundModel::bind(model, &tape);
    let noisy = noise_augment(windows, model.config().noise_alpha, rng);
    let terms = bound.losses(windows, &noisy, beta as Elem)?;
    let values = LossValues {
        reconstruction: terms.reconstruction.item() as f64,
        denoise: terms.denoise.item() as f64,
        contrast: terms.contrast.item() as f64,
        total: terms.total.item() as f64,
    };
    if let Some((component, value)) = diverged_component(&values) {
        return Err(TrainError::Diverged { component, value });
    }
    Ok(values)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub beta: f64,
    pub loss_rec: f64,
    pub loss_denoise: f64,
    pub loss_contrast: f64,
    pub loss_total: f64,
}

/// Why training stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainStop {
    Completed,
    /// A loss component went non-finite or past the contrast guard. The
    /// returned model holds the last parameters that produced a finite loss;
    /// no update was applied with the diverged gradients.
    Diverged { component: &'static str, value: f64, iteration: usize },
}

pub struct TrainOutcome {
    pub model: ModelState,
    pub log: Vec<TrainRecord>,
    pub stop: TrainStop,
}

/// Train a fresh model on a `[timestamps, channels]` series. Deterministic
/// in the configs: window sampling, initialization, and noise all derive
/// from `train.seed`.
pub fn train(
    series: &Tensor,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    let &[len, c] = series.shape() else {
        return Err(TrainError::SeriesShape {
            got: series.shape().to_vec(),
            channels: model_cfg.channels,
        });
    };
    if c != model_cfg.channels {
        return Err(TrainError::SeriesShape { got: series.shape().to_vec(), channels: model_cfg.channels });
    }
    if len < model_cfg.window_len {
        return Err(TrainError::SeriesTooShort { len, window: model_cfg.window_len });
    }

    let mut model = ModelState::init(model_cfg, train_cfg.seed)?;
    let mut optimizer = AdamW::new(model.tensors(), train_cfg.weight_decay);

    let mut window_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    window_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    noise_rng.set_stream(2);

    let batches_per_epoch = train_cfg.samples_per_epoch.div_ceil(train_cfg.batch_size);
    let total_iters = train_cfg.epochs * batches_per_epoch;
    let mut log = Vec::with_capacity(total_iters);
    let mut iteration = 0usize;

    for epoch in 0..train_cfg.epochs {
        let starts = sample_window_starts(
            len,
            train_cfg.samples_per_epoch,
            model.config().window_len,
            &mut window_rng,
        )?;
        for chunk in starts.chunks(train_cfg.batch_size) {
            let windows = gather_windows(series, chunk, model.config().window_len);
            let noisy = noise_augment(&windows, model.config().noise_alpha, &mut noise_rng);
            let lr = cosine_lr(iteration, total_iters, train_cfg.learning_rate);
            let beta = beta_schedule(iteration, train_cfg);

            let tape = crate::tensor::Tape::new();
            let bound = BoundModel::bind(&model, &tape);
            let terms = bound.losses(&windows, &noisy, beta as Elem)?;
            let values = LossValues {
                reconstruction: terms.reconstruction.item() as f64,
                denoise: terms.denoise.item() as f64,
                contrast: terms.contrast.item() as f64,
                total: terms.total.item() as f64,
            };
            // divergence is checked before the update, so the returned
            // parameters are the ones behind the last finite loss
            if let Some((component, value)) = diverged_component(&values) {
                drop(bound);
                drop(tape);
                return Ok(TrainOutcome {
                    model,
                    log,
                    stop: TrainStop::Diverged { component, value, iteration },
                });
            }

            tape.backward(terms.total);
            let grads = bound.grads();
            drop(bound);
            drop(tape);
            optimizer.step(model.tensors_mut(), &grads, lr);

            log.push(TrainRecord {
                iteration,
                epoch,
                lr,
                beta,
                loss_rec: values.reconstruction,
                loss_denoise: values.denoise,
                loss_contrast: values.contrast,
                loss_total: values.total,
            });
            iteration += 1;
        }
    }

    Ok(TrainOutcome { model, log, stop: TrainStop::Completed })
}
