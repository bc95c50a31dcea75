use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

use super::mlp::Activation;

/// Architecture and training settings shared by every learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub weight_decay: f64,
    /// Denoising noise levels in units of the standard deviation of `x`.
    /// The score is evaluated at the smallest.
    pub noise_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: vec![64, 64],
            activation: Activation::Silu,
            learning_rate: 0.01,
            max_epochs: 2000,
            patience: 50,
            validation_fraction: 0.2,
            weight_decay: 0.0,
            noise_scales: vec![0.1, 0.3],
            seed: 0,
        }
    }
}

impl LearnerConfig {
    /// Two hidden layers of 16 units and a larger step; used for large
    /// Monte Carlo studies.
    pub fn fast() -> Self {
        LearnerConfig {
            hidden: vec![16, 16],
            learning_rate: 0.03,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(domain("hidden layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(domain("learning_rate must be > 0"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(domain("max_epochs and patience must be >= 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(domain("validation_fraction must lie in (0,1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(domain("weight_decay must be >= 0"));
        }
        if self.noise_scales.is_empty() || self.noise_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(domain("noise_scales must be positive"));
        }
        Ok(())
    }

    pub(crate) fn eval_noise(&self) -> f64 {
        self.noise_scales.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
