use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::rng_from;

use super::config::LearnerConfig;
use super::mlp::{self, Loss, Mlp};
use super::{moments, Features, Standardizer, MODEL_FORMAT_VERSION};

/// Denoising score model for a scalar `x`, optionally conditional on `z`.
///
/// In standardised units the network `f(x, z, sigma)` is trained so that
/// `f / sigma` approximates the score of the `sigma`-smoothed density. Each
/// observation contributes a pair of antithetic perturbations `+xi`, `-xi`
/// per noise level, which cancels most of the target noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub format_version: u32,
    pub net: Mlp,
    pub x_mean: f64,
    pub x_scale: f64,
    pub z: Standardizer,
    pub eval_sigma: f64,
    pub validation_loss: f64,
    pub epochs: usize,
}

/// `d/dx log f(x | z)` by denoising score matching.
pub fn fit_conditional_score(x: &[f64], z: &Features, config: &LearnerConfig) -> Result<ScoreModel> {
    config.validate()?;
    if x.len() != z.n {
        return Err(Error::Mismatch(format!("{} x values, {} conditioning rows", x.len(), z.n)));
    }
    if x.len() < 50 {
        return Err(domain(format!("score matching needs at least 50 rows, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("x contains non-finite entries".into()));
    }
    z.check_finite("conditioning variables")?;
    let (x_mean, x_scale) = moments(x);
    let zs = Standardizer::fit(z);
    let zt = zs.apply(z);
    let d_in = z.d + 2;
    let scales = &config.noise_scales;
    let per_obs = 2 * scales.len();
    let mut rng = rng_from(config.seed);
    let mut feats = Vec::with_capacity(x.len() * per_obs * d_in);
    let mut targets = Vec::with_capacity(x.len() * per_obs);
    for (i, xi) in x.iter().enumerate() {
        let xt = (xi - x_mean) / x_scale;
        let zrow = &zt[i * z.d..(i + 1) * z.d];
        for &s in scales {
            let xi_noise: f64 = StandardNormal.sample(&mut rng);
            for sign in [1.0, -1.0] {
                let e = sign * xi_noise;
                feats.push(xt + s * e);
                feats.extend_from_slice(zrow);
                feats.push(s);
                targets.push(-e);
            }
        }
    }
    let n_rows = x.len() * per_obs;
    let trained = mlp::train(&feats, &targets, n_rows, Loss::Squared, config, per_obs, &mut rng)?;
    Ok(ScoreModel {
        format_version: MODEL_FORMAT_VERSION,
        net: trained.net,
        x_mean,
        x_scale,
        z: zs,
        eval_sigma: config.eval_noise(),
        validation_loss: trained.validation_loss,
        epochs: trained.epochs,
    })
}

/// `d/dx log f(x)` by denoising score matching.
pub fn fit_marginal_score(x: &[f64], config: &LearnerConfig) -> Result<ScoreModel> {
    fit_conditional_score(x, &Features::empty(x.len()), config)
}

impl ScoreModel {
    /// Scores at `(x_i, z_i)`; `z` must have the training column count.
    pub fn score(&self, x: &[f64], z: &Features) -> Vec<f64> {
        let d_in = z.d + 2;
        let mut feats = Vec::with_capacity(x.len() * d_in);
        for (i, xi) in x.iter().enumerate() {
            feats.push((xi - self.x_mean) / self.x_scale);
            self.z.apply_row(z.row(i), &mut feats);
            feats.push(self.eval_sigma);
        }
        self.net
            .forward(&feats, x.len())
            .into_iter()
            .map(|f| f / self.eval_sigma / self.x_scale)
            .collect()
    }

    pub fn score_one(&self, x: f64, z: &[f64]) -> f64 {
        let f = Features {
            n: 1,
            d: z.len(),
            data: z.to_vec(),
        };
        self.score(&[x], &f)[0]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ScoreModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported model format {}", m.format_version)));
        }
        Ok(m)
    }
}
