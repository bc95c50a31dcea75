use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::rng_from;

use super::config::LearnerConfig;
use super::mlp::{self, Loss, Mlp};
use super::{moments, Features, Standardizer, MODEL_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    #[default]
    Identity,
    /// Prediction is `target_mean * exp(output)`.
    Log,
}

/// Fitted least-squares network `features -> target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub format_version: u32,
    pub net: Mlp,
    pub input: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    pub target_transform: TargetTransform,
    /// Best validation loss: mean squared error in units of the target, or
    /// the Poisson quasi-likelihood for [`TargetTransform::Log`].
    pub validation_mse: f64,
    pub epochs: usize,
}

/// Minimises mean squared error, with early stopping on a held-out split.
/// A constant target yields the exact constant model.
pub fn fit_regression(features: &Features, targets: &[f64], config: &LearnerConfig) -> Result<RegressorModel> {
    config.validate()?;
    if features.n != targets.len() {
        return Err(Error::Mismatch(format!("{} feature rows, {} targets", features.n, targets.len())));
    }
    if features.n < 20 {
        return Err(domain(format!("regression needs at least 20 rows, got {}", features.n)));
    }
    features.check_finite("features")?;
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidData("targets contain non-finite entries".into()));
    }
    let input = Standardizer::fit(features);
    let x = input.apply(features);
    let (target_mean, spread) = moments(targets);
    let mut rng = rng_from(config.seed);

    let constant = crate::stats::std_dev(targets) <= 1e-10 * (target_mean.abs() + f64::MIN_POSITIVE);
    if constant {
        let mut net = Mlp::new(features.d, &config.hidden, 1, config.activation, &mut rng);
        net.zero_output();
        return Ok(RegressorModel {
            format_version: MODEL_FORMAT_VERSION,
            net,
            input,
            target_mean,
            target_scale: 1.0,
            target_transform: TargetTransform::Identity,
            validation_mse: 0.0,
            epochs: 0,
        });
    }
    let y: Vec<f64> = targets.iter().map(|t| (t - target_mean) / spread).collect();
    let trained = mlp::train(&x, &y, features.n, Loss::Squared, config, 1, &mut rng)?;
    Ok(RegressorModel {
        format_version: MODEL_FORMAT_VERSION,
        net: trained.net,
        input,
        target_mean,
        target_scale: spread,
        target_transform: TargetTransform::Identity,
        validation_mse: trained.validation_loss * spread * spread,
        epochs: trained.epochs,
    })
}

/// Conditional mean of a positive target through a log link, fitted by
/// Poisson quasi-likelihood. Predictions are strictly positive.
pub fn fit_positive_mean(features: &Features, targets: &[f64], config: &LearnerConfig) -> Result<RegressorModel> {
    config.validate()?;
    if features.n != targets.len() {
        return Err(Error::Mismatch(format!("{} feature rows, {} targets", features.n, targets.len())));
    }
    if features.n < 20 {
        return Err(domain(format!("regression needs at least 20 rows, got {}", features.n)));
    }
    features.check_finite("features")?;
    if targets.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidData("targets must be finite and non-negative".into()));
    }
    let target_mean = crate::stats::mean(targets);
    if !(target_mean > 0.0) {
        return Err(domain("targets are all zero"));
    }
    let input = Standardizer::fit(features);
    let x = input.apply(features);
    let mut rng = rng_from(config.seed);
    let y: Vec<f64> = targets.iter().map(|t| t / target_mean).collect();
    let constant = crate::stats::std_dev(&y) <= 1e-10;
    let (net, validation, epochs) = if constant {
        let mut net = Mlp::new(features.d, &config.hidden, 1, config.activation, &mut rng);
        net.zero_output();
        (net, 0.0, 0)
    } else {
        let t = mlp::train(&x, &y, features.n, Loss::Poisson, config, 1, &mut rng)?;
        (t.net, t.validation_loss, t.epochs)
    };
    Ok(RegressorModel {
        format_version: MODEL_FORMAT_VERSION,
        net,
        input,
        target_mean,
        target_scale: 1.0,
        target_transform: TargetTransform::Log,
        validation_mse: validation,
        epochs,
    })
}

/// Gradient of the fitted function at `point` with respect to every feature.
pub fn gradient_wrt_x(model: &RegressorModel, point: &[f64]) -> Vec<f64> {
    let f = Features {
        n: 1,
        d: point.len(),
        data: point.to_vec(),
    };
    (0..point.len()).map(|j| model.derivative(&f, j)[0]).collect()
}

impl RegressorModel {
    pub fn n_features(&self) -> usize {
        self.input.mean.len()
    }

    pub fn predict(&self, f: &Features) -> Vec<f64> {
        let x = self.input.apply(f);
        self.net.forward(&x, f.n).into_iter().map(|o| self.output(o)).collect()
    }

    fn output(&self, o: f64) -> f64 {
        match self.target_transform {
            TargetTransform::Identity => self.target_mean + self.target_scale * o,
            TargetTransform::Log => self.target_mean * o.min(mlp::POISSON_MAX_LOG).exp(),
        }
    }

    /// `d prediction / d raw output` given the raw output and the prediction.
    fn output_slope(&self, o: f64, pred: f64) -> f64 {
        match self.target_transform {
            TargetTransform::Identity => self.target_scale,
            TargetTransform::Log if o < mlp::POISSON_MAX_LOG => pred,
            TargetTransform::Log => 0.0,
        }
    }

    pub fn predict_one(&self, row: &[f64]) -> f64 {
        let f = Features {
            n: 1,
            d: row.len(),
            data: row.to_vec(),
        };
        self.predict(&f)[0]
    }

    /// Derivative of the prediction with respect to feature `coord` at each
    /// row, including the chain rule through standardisation.
    pub fn derivative(&self, f: &Features, coord: usize) -> Vec<f64> {
        self.predict_with_derivative(f, coord).1
    }

    /// Predictions and derivatives in one pass.
    pub fn predict_with_derivative(&self, f: &Features, coord: usize) -> (Vec<f64>, Vec<f64>) {
        let x = self.input.apply(f);
        let (out, g) = self.net.forward_with_input_gradient(&x, f.n, 0);
        let d = self.n_features();
        let pred: Vec<f64> = out.iter().map(|&o| self.output(o)).collect();
        let der = (0..f.n)
            .map(|i| g[i * d + coord] * self.output_slope(out[i], pred[i]) / self.input.scale[coord])
            .collect();
        (pred, der)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RegressorModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported model format {}", m.format_version)));
        }
        Ok(m)
    }
}
