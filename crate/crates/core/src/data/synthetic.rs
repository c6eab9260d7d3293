//! Group-imbalanced binary classification data with a spurious attribute.
//!
//! Every example belongs to one `(attribute a, label y)` cell, with group id
//! `g = 2a + y`. Features are
//!
//! * core: `N((2y - 1) μ_core, s²)`, predictive of the label in every group;
//! * spurious: `N(±μ_sp, s²)`, centred on the attribute side `(2a - 1)` with
//!   probability `spurious_agreement`, on the opposite side otherwise;
//! * `extra_noise_dims` coordinates of pure `N(0, s²)` noise.
//!
//! The attribute predicts the label only through the skewed cell sizes.

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::{Dataset, Example, TaskKind};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Example counts for groups `(a=0,y=0), (a=0,y=1), (a=1,y=0), (a=1,y=1)`.
    pub group_sizes: [usize; 4],
    pub core_mean: f64,
    pub spurious_mean: f64,
    pub noise_std: f64,
    pub spurious_agreement: f64,
    pub extra_noise_dims: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Cell proportions follow the CelebA training split scaled to 2000
    /// examples; the minority cell holds 17 examples (0.85%). The 200 noise
    /// coordinates give the minority cell room to be memorised, which is
    /// what private training takes away.
    fn default() -> Self {
        Self {
            group_sizes: [822, 17, 880, 281],
            core_mean: 2.0,
            spurious_mean: 2.0,
            noise_std: 1.0,
            spurious_agreement: 1.0,
            extra_noise_dims: 200,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.group_sizes.contains(&0) {
            return Err(DataError::InvalidSpec("every group size must be >= 1".into()));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(DataError::InvalidSpec("noise_std must be positive".into()));
        }
        if !(0.5..=1.0).contains(&self.spurious_agreement) {
            return Err(DataError::InvalidSpec(
                "spurious_agreement must lie in [0.5, 1]".into(),
            ));
        }
        if !self.core_mean.is_finite() || !self.spurious_mean.is_finite() {
            return Err(DataError::InvalidSpec("feature means must be finite".into()));
        }
        Ok(())
    }

    /// Same feature distribution with different cell sizes and seed.
    pub fn with_sizes(&self, group_sizes: [usize; 4], seed: u64) -> Self {
        Self {
            group_sizes,
            seed,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        2 + self.extra_noise_dims
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed, "synthetic");
    let s = spec.noise_std;
    let total: usize = spec.group_sizes.iter().sum();
    let mut examples = Vec::with_capacity(total);
    for (g, &size) in spec.group_sizes.iter().enumerate() {
        let a = (g / 2) as f64;
        let y = (g % 2) as f64;
        for _ in 0..size {
            let mut x = Vec::with_capacity(spec.dim());
            x.push((2.0 * y - 1.0) * spec.core_mean + s * rng.normal());
            let side = if rng.bernoulli(spec.spurious_agreement) {
                2.0 * a - 1.0
            } else {
                1.0 - 2.0 * a
            };
            x.push(side * spec.spurious_mean + s * rng.normal());
            for _ in 0..spec.extra_noise_dims {
                x.push(s * rng.normal());
            }
            examples.push(Example::new(x, g, y));
        }
    }
    Ok(Dataset::new(examples, 4, TaskKind::Classification)?)
}
