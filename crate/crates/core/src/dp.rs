//! DP-SGD mechanics: per-sample clipping, Gaussian noise, Poisson batches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{l2_norm, Example, Model, ModelError, ModelParams, TaskKind};
use crate::rng::RngStream;

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_CLIP_CLASSIFICATION: f64 = 1.2;
pub const DEFAULT_CLIP_REGRESSION: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("gradient contains a non-finite entry")]
    NonFiniteGradient,
    #[error("invalid privacy parameters: {0}")]
    InvalidSpec(String),
    #[error("noise multiplier {sigma} gives unbounded privacy loss")]
    InfinitePrivacyCost { sigma: f64 },
    #[error("accountant has no recorded steps")]
    EmptyAccountant,
    #[error("target epsilon {target} unreachable: sigma = 1000 still gives {best}")]
    CalibrationUnreachable { target: f64, best: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Default clipping bound for a task: 1.2 for classifiers, 0.8 for regressors.
pub fn default_clipping_bound(task: TaskKind) -> f64 {
    match task {
        TaskKind::Classification => DEFAULT_CLIP_CLASSIFICATION,
        TaskKind::Regression => DEFAULT_CLIP_REGRESSION,
    }
}

/// Privacy parameters of one private training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    /// The ε the noise multiplier was calibrated for, if any.
    pub target_epsilon: Option<f64>,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub clipping_bound: f64,
    pub sampling_rate: f64,
    pub total_steps: usize,
}

impl PrivacySpec {
    /// A spec with an explicit noise multiplier.
    pub fn with_noise(
        noise_multiplier: f64,
        clipping_bound: f64,
        sampling_rate: f64,
        total_steps: usize,
    ) -> Self {
        Self {
            target_epsilon: None,
            delta: DEFAULT_DELTA,
            noise_multiplier,
            clipping_bound,
            sampling_rate,
            total_steps,
        }
    }

    /// A spec whose noise multiplier is calibrated to `target_epsilon` over `total_steps`.
    pub fn calibrated(
        target_epsilon: f64,
        delta: f64,
        clipping_bound: f64,
        sampling_rate: f64,
        total_steps: usize,
    ) -> Result<Self, DpError> {
        let sigma = crate::accountant::calibrate_sigma(
            target_epsilon,
            delta,
            sampling_rate,
            total_steps,
        )?;
        let spec = Self {
            target_epsilon: Some(target_epsilon),
            delta,
            noise_multiplier: sigma,
            clipping_bound,
            sampling_rate,
            total_steps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpError::InvalidSpec(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(self.clipping_bound > 0.0) || !self.clipping_bound.is_finite() {
            return Err(DpError::InvalidSpec(format!(
                "clipping bound {} must be positive",
                self.clipping_bound
            )));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(DpError::InvalidSpec(format!(
                "noise multiplier {} must be non-negative",
                self.noise_multiplier
            )));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(DpError::InvalidSpec(format!(
                "sampling rate {} outside (0, 1]",
                self.sampling_rate
            )));
        }
        if let Some(t) = self.target_epsilon {
            if !(t > 0.0) {
                return Err(DpError::InvalidSpec(format!("target epsilon {t} must be positive")));
            }
        }
        Ok(())
    }
}

/// A privatized batch gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradient {
    pub value: Vec<f64>,
    pub batch_size_drawn: usize,
}

/// Scales `grad` by `min(1, bound / ||grad||)`.
pub fn clip(grad: &[f64], bound: f64) -> Result<Vec<f64>, DpError> {
    if !(bound > 0.0) {
        return Err(DpError::InvalidSpec(format!("clipping bound {bound} must be positive")));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(DpError::NonFiniteGradient);
    }
    let norm = l2_norm(grad);
    if norm <= bound {
        return Ok(grad.to_vec());
    }
    let scale = bound / norm;
    Ok(grad.iter().map(|g| g * scale).collect())
}

/// Adds `N(0, std^2)` to every coordinate. Draws nothing when `std == 0`.
fn add_gaussian(values: &mut [f64], std: f64, rng: &mut RngStream) {
    if std == 0.0 {
        return;
    }
    for v in values.iter_mut() {
        *v += std * rng.normal();
    }
}

/// `Σ_i u_i clip(g_i, C) + ξ` with `ξ ~ N(0, (σ C max(1, max_i u_i))² I)`.
///
/// The noise scale follows the largest per-example weight, which bounds how
/// much one example can move the sum. Unit weights give plain DP-SGD noise.
pub fn privatize_weighted_sum(
    grads: &[Vec<f64>],
    weights: &[f64],
    dim: usize,
    spec: &PrivacySpec,
    rng: &mut RngStream,
) -> Result<Vec<f64>, DpError> {
    if grads.len() != weights.len() {
        return Err(DpError::InvalidSpec(format!(
            "{} gradients but {} weights",
            grads.len(),
            weights.len()
        )));
    }
    let mut sum = vec![0.0; dim];
    let mut max_weight = 1.0f64;
    for (g, &w) in grads.iter().zip(weights) {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(DpError::InvalidSpec(format!("example weight {w} must be finite and >= 0")));
        }
        max_weight = max_weight.max(w);
        let c = clip(g, spec.clipping_bound)?;
        for (s, ci) in sum.iter_mut().zip(&c) {
            *s += w * ci;
        }
    }
    add_gaussian(
        &mut sum,
        spec.noise_multiplier * spec.clipping_bound * max_weight,
        rng,
    );
    Ok(sum)
}

/// `(1 / max(1, |batch|)) * (Σ clip(g_i, C) + ξ)` with `ξ ~ N(0, σ²C² I)`.
pub fn private_batch_gradient(
    model: &Model,
    params: &ModelParams,
    batch: &[&Example],
    spec: &PrivacySpec,
    rng: &mut RngStream,
) -> Result<NoisyGradient, DpError> {
    let grads = batch
        .iter()
        .map(|ex| model.grad(params, ex))
        .collect::<Result<Vec<_>, _>>()?;
    let mut value = privatize_weighted_sum(
        &grads,
        &vec![1.0; grads.len()],
        model.num_params(),
        spec,
        rng,
    )?;
    let scale = 1.0 / batch.len().max(1) as f64;
    value.iter_mut().for_each(|v| *v *= scale);
    Ok(NoisyGradient {
        value,
        batch_size_drawn: batch.len(),
    })
}

/// `params - lr * grad`.
pub fn dp_sgd_step(params: &ModelParams, grad: &NoisyGradient, lr: f64) -> ModelParams {
    ModelParams {
        shape: params.shape,
        values: params
            .values
            .iter()
            .zip(&grad.value)
            .map(|(p, g)| p - lr * g)
            .collect(),
    }
}

/// Poisson subsample: every index in `0..n` is kept independently with probability `q`.
pub fn poisson_sample(n: usize, q: f64, rng: &mut RngStream) -> Vec<usize> {
    (0..n).filter(|_| rng.bernoulli(q)).collect()
}
