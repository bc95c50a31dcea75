use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::rng_from;

use super::config::LearnerConfig;
use super::mlp::{self, Loss, Mlp};
use super::{Features, Standardizer, MODEL_FORMAT_VERSION};

/// Bounds applied to every ratio prediction.
pub const RATIO_CLIP: [f64; 2] = [1e-3, 1e3];

/// Classifier of joint `(x, v)` pairs against pairs with `v` permuted. With
/// balanced classes the logit estimates `log f(x, v) / (f(x) f(v))`, so
/// `f_V(v) / f_{V|X}(v | x) = exp(-logit)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub format_version: u32,
    pub net: Mlp,
    /// Standardisation of `(x..., v)`.
    pub input: Standardizer,
    pub validation_loss: f64,
    pub epochs: usize,
}

pub fn fit_density_ratio(v: &[f64], x: &Features, config: &LearnerConfig) -> Result<RatioModel> {
    config.validate()?;
    if v.len() != x.n {
        return Err(Error::Mismatch(format!("{} v values, {} x rows", v.len(), x.n)));
    }
    if v.len() < 50 {
        return Err(domain(format!("density ratio needs at least 50 rows, got {}", v.len())));
    }
    x.check_finite("x")?;
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidData("v contains non-finite entries".into()));
    }
    let spread = crate::stats::std_dev(v);
    if !(spread > 0.0) {
        return Err(Error::InvalidData(
            "v is constant, so joint and permuted samples are indistinguishable".into(),
        ));
    }
    let mut rng = rng_from(config.seed);
    let mut perm: Vec<usize> = (0..v.len()).collect();
    perm.shuffle(&mut rng);

    let joint = x.with_column(v);
    let input = Standardizer::fit(&joint);
    let d = joint.d;
    let mut feats = Vec::with_capacity(2 * joint.n * d);
    let mut labels = Vec::with_capacity(2 * joint.n);
    for i in 0..joint.n {
        input.apply_row(joint.row(i), &mut feats);
        labels.push(1.0);
        let mut prod = x.row(i).to_vec();
        prod.push(v[perm[i]]);
        input.apply_row(&prod, &mut feats);
        labels.push(0.0);
    }
    let trained = mlp::train(&feats, &labels, 2 * joint.n, Loss::Logistic, config, 2, &mut rng)?;
    Ok(RatioModel {
        format_version: MODEL_FORMAT_VERSION,
        net: trained.net,
        input,
        validation_loss: trained.validation_loss,
        epochs: trained.epochs,
    })
}

impl RatioModel {
    /// Estimated `log f(x, v) / (f(x) f(v))` per row.
    pub fn log_odds(&self, x: &Features, v: &[f64]) -> Vec<f64> {
        let joint = x.with_column(v);
        let feats = self.input.apply(&joint);
        self.net.forward(&feats, joint.n)
    }

    /// Clipped ratios and the number of rows that hit a bound.
    pub fn ratio(&self, x: &Features, v: &[f64]) -> (Vec<f64>, usize) {
        let mut clipped = 0;
        let out = self
            .log_odds(x, v)
            .into_iter()
            .map(|l| {
                let r = (-l).exp();
                if !(RATIO_CLIP[0]..=RATIO_CLIP[1]).contains(&r) {
                    clipped += 1;
                }
                r.clamp(RATIO_CLIP[0], RATIO_CLIP[1])
            })
            .collect();
        (out, clipped)
    }

    pub fn ratio_one(&self, x: &[f64], v: f64) -> f64 {
        let f = Features {
            n: 1,
            d: x.len(),
            data: x.to_vec(),
        };
        self.ratio(&f, &[v]).0[0]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RatioModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported model format {}", m.format_version)));
        }
        Ok(m)
    }
}
