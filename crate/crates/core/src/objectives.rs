//! ERM and Group DRO training loops, each optionally run under DP-SGD.
//!
//! Both objectives share one loop. Every step draws a Poisson batch at rate
//! `batch_size / N`, evaluates per-example losses and gradients, and descends
//! on a weighted sum of (clipped, when private) per-example gradients:
//!
//! `grad = (Σ_i u_i g_i + ξ) / D`
//!
//! ERM uses `u_i = 1` and `D = max(1, |B|)`. Group DRO uses
//! `u_i = q̃_g · |B| / |B_g|` and `D = |B|`, where `q̃` are the group weights
//! renormalized over the groups present in the batch, so that `grad` is the
//! gradient of `Σ_g q̃_g ℓ_g`. Under DP, `ξ ~ N(0, (σ C max(1, max_i u_i))² I)`.
//! With a single group the two objectives coincide bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::AccountantState;
use crate::dp::{poisson_sample, privatize_weighted_sum, DpError, PrivacySpec};
use crate::model::{Dataset, Example, GroupId, Model, ModelError, ModelParams};
use crate::rng::RngStream;

pub const DEFAULT_DRO_STEP_SIZE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("group losses contain a non-finite value")]
    NonFiniteLoss,
    #[error("group weights and losses differ in length ({weights} vs {losses})")]
    LengthMismatch { weights: usize, losses: usize },
    #[error("training diverged: parameters became non-finite at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "GroupDRO")]
    GroupDro,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Erm => "ERM",
            Objective::GroupDro => "GroupDRO",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mixture weights over groups; always a point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    q: Vec<f64>,
}

impl GroupWeights {
    pub fn uniform(num_groups: usize) -> Self {
        Self {
            q: vec![1.0 / num_groups as f64; num_groups],
        }
    }

    pub fn new(q: Vec<f64>) -> Result<Self, TrainError> {
        if q.is_empty() || q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(TrainError::Config("group weights must be finite and non-negative".into()));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TrainError::Config(format!("group weights sum to {total}, not 1")));
        }
        Ok(Self { q })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Exponentiated-gradient ascent on the group weights:
/// `q'_g ∝ q_g exp(η ℓ_g)`, renormalized to the simplex.
pub fn dro_weight_update(
    q: &GroupWeights,
    group_losses: &[f64],
    step_size: f64,
) -> Result<GroupWeights, TrainError> {
    let present: Vec<Option<f64>> = group_losses.iter().copied().map(Some).collect();
    dro_weight_update_present(q, &present, step_size)
}

/// Like [`dro_weight_update`], but groups with no loss this step keep their
/// weight; the mass of the present groups is redistributed among them.
pub fn dro_weight_update_present(
    q: &GroupWeights,
    group_losses: &[Option<f64>],
    step_size: f64,
) -> Result<GroupWeights, TrainError> {
    if q.len() != group_losses.len() {
        return Err(TrainError::LengthMismatch {
            weights: q.len(),
            losses: group_losses.len(),
        });
    }
    if group_losses.iter().flatten().any(|l| !l.is_finite()) || !step_size.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    let present_mass: f64 = q
        .q
        .iter()
        .zip(group_losses)
        .filter(|(_, l)| l.is_some())
        .map(|(w, _)| w)
        .sum();
    if present_mass == 0.0 {
        return Ok(q.clone());
    }
    let logits: Vec<Option<f64>> = q
        .q
        .iter()
        .zip(group_losses)
        .map(|(&w, l)| l.map(|l| w.ln() + step_size * l))
        .collect();
    let max = logits
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<Option<f64>> = logits
        .iter()
        .map(|l| l.map(|l| (l - max).exp()))
        .collect();
    let z: f64 = unnorm.iter().flatten().sum();
    let new_q = q
        .q
        .iter()
        .zip(&unnorm)
        .map(|(&w, u)| match u {
            Some(u) => present_mass * u / z,
            None => w,
        })
        .collect();
    Ok(GroupWeights { q: new_q })
}

/// Largest per-group mean loss and the group attaining it (lowest id on ties).
pub fn worst_group_loss(
    model: &Model,
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<(f64, GroupId), TrainError> {
    dataset.require_nonempty_groups()?;
    let mut best: Option<(f64, GroupId)> = None;
    for (g, idx) in dataset.group_indices().iter().enumerate() {
        let loss = model.mean_loss(params, idx.iter().map(|&i| &dataset.examples()[i]))?;
        if best.is_none_or(|(b, _)| loss > b) {
            best = Some((loss, g));
        }
    }
    Ok(best.expect("dataset has at least one group"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub steps: usize,
    pub lr: f64,
    /// Exponentiated-gradient step size on the group weights (Group DRO only).
    pub dro_step_size: f64,
    pub batch_size: usize,
    pub privacy: Option<PrivacySpec>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(objective: Objective, steps: usize, lr: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            objective,
            steps,
            lr,
            dro_step_size: DEFAULT_DRO_STEP_SIZE,
            batch_size,
            privacy: None,
            seed,
        }
    }

    pub fn with_privacy(mut self, privacy: PrivacySpec) -> Self {
        self.privacy = Some(privacy);
        self
    }

    pub fn with_dro_step_size(mut self, step_size: f64) -> Self {
        self.dro_step_size = step_size;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if !(self.dro_step_size >= 0.0) || !self.dro_step_size.is_finite() {
            return Err(TrainError::Config(format!(
                "DRO step size {} must be >= 0",
                self.dro_step_size
            )));
        }
        if let Some(p) = &self.privacy {
            p.validate()?;
        }
        Ok(())
    }

    /// Poisson sampling rate used for a dataset of `n` examples.
    pub fn sampling_rate(&self, n: usize) -> f64 {
        match &self.privacy {
            Some(p) => p.sampling_rate,
            None => (self.batch_size as f64 / n as f64).min(1.0),
        }
    }
}

/// Summary of a finished training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean batch loss over each epoch-length block of `ceil(N / batch_size)` steps.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: usize,
    pub accountant_steps: usize,
    pub noise_multiplier: Option<f64>,
    pub realized_epsilon: Option<f64>,
    /// Group weights at the end of every epoch block (Group DRO only).
    pub group_weight_history: Vec<Vec<f64>>,
    pub final_group_weights: Option<Vec<f64>>,
}

/// Group-blind minibatch SGD on the mean loss.
pub fn train_erm(
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace), TrainError> {
    if cfg.objective != Objective::Erm {
        return Err(TrainError::Config("train_erm called with a non-ERM config".into()));
    }
    run(model, dataset, cfg)
}

/// Online Group DRO: exponentiated-gradient ascent on group weights, descent
/// on the weighted group losses.
pub fn train_dro(
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace), TrainError> {
    if cfg.objective != Objective::GroupDro {
        return Err(TrainError::Config("train_dro called with a non-DRO config".into()));
    }
    dataset.require_nonempty_groups()?;
    run(model, dataset, cfg)
}

/// Dispatches on `cfg.objective`.
pub fn train(
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace), TrainError> {
    match cfg.objective {
        Objective::Erm => train_erm(model, dataset, cfg),
        Objective::GroupDro => train_dro(model, dataset, cfg),
    }
}

/// Per-example weights `u_i` and divisor `D` for one batch.
pub(crate) fn batch_weights(
    objective: Objective,
    batch: &[&Example],
    weights: &GroupWeights,
) -> (Vec<f64>, f64) {
    match objective {
        Objective::Erm => (vec![1.0; batch.len()], batch.len().max(1) as f64),
        Objective::GroupDro => {
            let mut counts = vec![0usize; weights.len()];
            for ex in batch {
                counts[ex.group] += 1;
            }
            let present_mass: f64 = weights
                .as_slice()
                .iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .map(|(w, _)| w)
                .sum();
            let n = batch.len() as f64;
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            let u = batch
                .iter()
                .map(|ex| {
                    // every present group underflowed to zero mass: split evenly
                    let q = if present_mass > 0.0 {
                        weights.as_slice()[ex.group] / present_mass
                    } else {
                        1.0 / present
                    };
                    q * n / counts[ex.group] as f64
                })
                .collect();
            (u, batch.len().max(1) as f64)
        }
    }
}

fn run(
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainTrace), TrainError> {
    cfg.validate()?;
    if dataset.dim() != model.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: model.input_dim,
            got: dataset.dim(),
        }
        .into());
    }
    let n = dataset.len();
    let num_groups = dataset.num_groups();
    let stream = RngStream::new(cfg.seed, "train");
    let mut init_rng = stream.derive("init");
    let mut sample_rng = stream.derive("sample");
    let mut noise_rng = stream.derive("noise");

    let mut params = model.init_params(&mut init_rng);
    let rate = cfg.sampling_rate(n);
    let mut accountant = cfg.privacy.as_ref().map(|_| AccountantState::new());
    let mut weights = GroupWeights::uniform(num_groups);
    let is_dro = cfg.objective == Objective::GroupDro;

    let steps_per_epoch = n.div_ceil(cfg.batch_size).max(1);
    let mut epoch_losses = Vec::new();
    let mut weight_history = Vec::new();
    let (mut block_loss, mut block_batches) = (0.0, 0usize);

    let dim = model.num_params();
    for step in 0..cfg.steps {
        let idx = poisson_sample(n, rate, &mut sample_rng);
        let batch: Vec<&Example> = idx.iter().map(|&i| &dataset.examples()[i]).collect();

        let mut losses = Vec::with_capacity(batch.len());
        let mut grads = Vec::with_capacity(batch.len());
        for ex in &batch {
            let (l, g) = model.loss_and_grad(&params, ex)?;
            losses.push(l);
            grads.push(g);
        }
        if !batch.is_empty() {
            block_loss += losses.iter().sum::<f64>() / batch.len() as f64;
            block_batches += 1;
        }

        if is_dro && !batch.is_empty() {
            let mut sums = vec![0.0; num_groups];
            let mut counts = vec![0usize; num_groups];
            for (ex, l) in batch.iter().zip(&losses) {
                sums[ex.group] += l;
                counts[ex.group] += 1;
            }
            let group_losses: Vec<Option<f64>> = sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                .collect();
            weights = dro_weight_update_present(&weights, &group_losses, cfg.dro_step_size)?;
        }

        let (u, divisor) = batch_weights(cfg.objective, &batch, &weights);
        let mut direction = vec![0.0; dim];
        match &cfg.privacy {
            None => {
                for (g, w) in grads.iter().zip(&u) {
                    for (d, gi) in direction.iter_mut().zip(g) {
                        *d += w * gi;
                    }
                }
            }
            Some(spec) => {
                direction = privatize_weighted_sum(&grads, &u, dim, spec, &mut noise_rng)?;
                accountant
                    .as_mut()
                    .expect("accountant exists for private runs")
                    .record_step(spec.sampling_rate, spec.noise_multiplier)?;
            }
        }
        for (p, d) in params.values.iter_mut().zip(&direction) {
            *p -= cfg.lr * d / divisor;
        }
        if !params.is_finite() {
            return Err(TrainError::Diverged(step));
        }

        if (step + 1) % steps_per_epoch == 0 || step + 1 == cfg.steps {
            epoch_losses.push(if block_batches > 0 {
                block_loss / block_batches as f64
            } else {
                f64::NAN
            });
            block_loss = 0.0;
            block_batches = 0;
            if is_dro {
                weight_history.push(weights.as_slice().to_vec());
            }
        }
    }

    let (noise_multiplier, realized_epsilon, accountant_steps) = match (&cfg.privacy, &accountant) {
        (Some(spec), Some(acc)) => (
            Some(spec.noise_multiplier),
            Some(acc.epsilon(spec.delta)?),
            acc.steps_recorded(),
        ),
        _ => (None, None, 0),
    };
    let trace = TrainTrace {
        epoch_losses,
        optimizer_steps: cfg.steps,
        accountant_steps,
        noise_multiplier,
        realized_epsilon,
        group_weight_history: weight_history,
        final_group_weights: is_dro.then(|| weights.as_slice().to_vec()),
    };
    Ok((params, trace))
}
