use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::rng::Rng;

/// Whether the individual coefficient multiplies `log x` or `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Elasticity,
    SemiElasticity,
}

impl Convention {
    /// Maps a regressor level to the value that multiplies `eps`.
    pub fn transform(self, x: f64) -> f64 {
        match self {
            Convention::Elasticity => x.ln(),
            Convention::SemiElasticity => x,
        }
    }
}

/// Joint law of the individual intercept and elasticity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefLaw {
    Degenerate {
        a: f64,
        eps: f64,
    },
    GaussianIndep {
        a_const: f64,
        eps_mean: f64,
        eps_var: f64,
    },
    /// `(a, eps)` jointly normal with `mean = [E a, E eps]`.
    BivariateGaussian {
        mean: [f64; 2],
        cov: [[f64; 2]; 2],
    },
    /// `(a1, eps1)` with probability `p`, `(a2, eps2)` otherwise.
    TwoPoint {
        a1: f64,
        eps1: f64,
        a2: f64,
        eps2: f64,
        p: f64,
    },
}

impl CoefLaw {
    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match *self {
            CoefLaw::Degenerate { a, eps } if !finite(&[a, eps]) => {
                Err(domain("degenerate coefficients must be finite"))
            }
            CoefLaw::GaussianIndep {
                a_const,
                eps_mean,
                eps_var,
            } => {
                if !finite(&[a_const, eps_mean, eps_var]) || eps_var < 0.0 {
                    Err(domain(format!("eps_var must be >= 0 and finite, got {eps_var}")))
                } else {
                    Ok(())
                }
            }
            CoefLaw::BivariateGaussian { mean, cov } => {
                let all = [mean[0], mean[1], cov[0][0], cov[0][1], cov[1][0], cov[1][1]];
                if !finite(&all) {
                    return Err(domain("bivariate parameters must be finite"));
                }
                if (cov[0][1] - cov[1][0]).abs() > 1e-12 {
                    return Err(domain("covariance matrix must be symmetric"));
                }
                let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
                if cov[0][0] < 0.0 || cov[1][1] < 0.0 || det < -1e-12 {
                    return Err(domain("covariance matrix must be positive semidefinite"));
                }
                Ok(())
            }
            CoefLaw::TwoPoint { a1, eps1, a2, eps2, p } => {
                if !finite(&[a1, eps1, a2, eps2]) || !(0.0..=1.0).contains(&p) {
                    Err(domain(format!("two-point probability must lie in [0,1], got {p}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> (f64, f64) {
        match *self {
            CoefLaw::Degenerate { a, eps } => (a, eps),
            CoefLaw::GaussianIndep {
                a_const,
                eps_mean,
                eps_var,
            } => {
                let z: f64 = StandardNormal.sample(rng);
                (a_const, eps_mean + eps_var.sqrt() * z)
            }
            CoefLaw::BivariateGaussian { mean, cov } => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                // Cholesky of a PSD 2x2 matrix.
                let l11 = cov[0][0].max(0.0).sqrt();
                let l21 = if l11 > 0.0 { cov[1][0] / l11 } else { 0.0 };
                let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
                (mean[0] + l11 * z1, mean[1] + l21 * z1 + l22 * z2)
            }
            CoefLaw::TwoPoint { a1, eps1, a2, eps2, p } => {
                if rng.random::<f64>() < p {
                    (a1, eps1)
                } else {
                    (a2, eps2)
                }
            }
        }
    }

    /// Support points with probabilities when the law is discrete.
    pub fn atoms(&self) -> Option<Vec<(f64, f64, f64)>> {
        match *self {
            CoefLaw::Degenerate { a, eps } => Some(vec![(a, eps, 1.0)]),
            CoefLaw::TwoPoint { a1, eps1, a2, eps2, p } => {
                Some(vec![(a1, eps1, p), (a2, eps2, 1.0 - p)])
            }
            CoefLaw::GaussianIndep { a_const, eps_mean, eps_var } if eps_var == 0.0 => {
                Some(vec![(a_const, eps_mean, 1.0)])
            }
            _ => None,
        }
    }

    pub fn eps_mean(&self) -> f64 {
        match *self {
            CoefLaw::Degenerate { eps, .. } => eps,
            CoefLaw::GaussianIndep { eps_mean, .. } => eps_mean,
            CoefLaw::BivariateGaussian { mean, .. } => mean[1],
            CoefLaw::TwoPoint { eps1, eps2, p, .. } => p * eps1 + (1.0 - p) * eps2,
        }
    }

    pub fn eps_var(&self) -> f64 {
        match *self {
            CoefLaw::Degenerate { .. } => 0.0,
            CoefLaw::GaussianIndep { eps_var, .. } => eps_var,
            CoefLaw::BivariateGaussian { cov, .. } => cov[1][1],
            CoefLaw::TwoPoint { eps1, eps2, p, .. } => p * (1.0 - p) * (eps1 - eps2).powi(2),
        }
    }
}

/// Law of the regressor level `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorLaw {
    /// `log X` uniform on `[log lo, log hi]`.
    LogUniform { lo: f64, hi: f64 },
    Bernoulli { p: f64 },
    Fixed { x: f64 },
    /// Normal level; only meaningful under the semi-elasticity convention.
    Normal { mean: f64, sd: f64 },
}

impl RegressorLaw {
    pub fn validate(&self, convention: Convention) -> Result<()> {
        match *self {
            RegressorLaw::LogUniform { lo, hi } => {
                if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                    return Err(domain(format!("LogUniform needs 0 < lo < hi, got ({lo}, {hi})")));
                }
            }
            RegressorLaw::Bernoulli { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(domain(format!("Bernoulli p must lie in (0,1), got {p}")));
                }
                if convention == Convention::Elasticity {
                    return Err(domain("Bernoulli regressor requires the semi-elasticity convention"));
                }
            }
            RegressorLaw::Fixed { x } => {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(domain(format!("Fixed x must be > 0, got {x}")));
                }
            }
            RegressorLaw::Normal { mean, sd } => {
                if !(mean.is_finite() && sd > 0.0 && sd.is_finite()) {
                    return Err(domain("Normal regressor needs finite mean and sd > 0"));
                }
                if convention == Convention::Elasticity {
                    return Err(domain("Normal regressor requires the semi-elasticity convention"));
                }
            }
        }
        Ok(())
    }

    /// Draws the transformed regressor `t(X)` directly.
    pub fn draw_transformed(&self, convention: Convention, rng: &mut Rng) -> f64 {
        match *self {
            RegressorLaw::LogUniform { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                let log_x = a + (b - a) * rng.random::<f64>();
                match convention {
                    Convention::Elasticity => log_x,
                    Convention::SemiElasticity => log_x.exp(),
                }
            }
            RegressorLaw::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            RegressorLaw::Fixed { x } => convention.transform(x),
            RegressorLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }

    /// Returns `Some(t)` when the law is a point mass.
    pub fn fixed_transformed(&self, convention: Convention) -> Option<f64> {
        match *self {
            RegressorLaw::Fixed { x } => Some(convention.transform(x)),
            _ => None,
        }
    }
}

/// Mean-zero additive noise on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    Gaussian { sd: f64 },
}

impl NoiseLaw {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            NoiseLaw::Gaussian { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NoiseLaw::Gaussian { sd } if !(sd >= 0.0 && sd.is_finite()) => {
                Err(domain(format!("noise sd must be >= 0, got {sd}")))
            }
            _ => Ok(()),
        }
    }
}

/// Population for a cross-section: coefficient law, regressor law, noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub coef_law: CoefLaw,
    pub regressor_law: RegressorLaw,
    #[serde(default)]
    pub noise_law: Option<NoiseLaw>,
    #[serde(default)]
    pub convention: Convention,
}

impl PopulationSpec {
    pub fn new(coef_law: CoefLaw, regressor_law: RegressorLaw) -> Self {
        PopulationSpec {
            coef_law,
            regressor_law,
            noise_law: None,
            convention: Convention::Elasticity,
        }
    }

    pub fn with_noise(mut self, noise: NoiseLaw) -> Self {
        self.noise_law = Some(noise);
        self
    }

    pub fn with_convention(mut self, convention: Convention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.coef_law.validate()?;
        self.regressor_law.validate(self.convention)?;
        if let Some(n) = &self.noise_law {
            n.validate()?;
        }
        Ok(())
    }

    /// Draws the effective intercept (including noise) and the elasticity.
    pub(crate) fn draw_individual(&self, rng: &mut Rng) -> (f64, f64) {
        let (a, eps) = self.coef_law.draw(rng);
        let noise = self.noise_law.as_ref().map_or(0.0, |n| n.draw(rng));
        (a + noise, eps)
    }
}

/// Law of the instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstrumentLaw {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InstrumentLaw {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            InstrumentLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            InstrumentLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InstrumentLaw::Normal { mean, sd } if !(mean.is_finite() && sd > 0.0) => {
                Err(domain("instrument Normal needs sd > 0"))
            }
            InstrumentLaw::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(domain("instrument Uniform needs lo < hi"))
            }
            _ => Ok(()),
        }
    }
}

/// First-stage map `z -> g(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FirstStage {
    Linear { slope: f64, intercept: f64 },
    /// `intercept + slope * z + curvature * z^2`
    Quadratic {
        intercept: f64,
        slope: f64,
        curvature: f64,
    },
}

impl FirstStage {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            FirstStage::Linear { slope, intercept } => intercept + slope * z,
            FirstStage::Quadratic {
                intercept,
                slope,
                curvature,
            } => intercept + slope * z + curvature * z * z,
        }
    }
}

/// Law of the first-stage residual, independent of the instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResidualLaw {
    Normal { sd: f64 },
}

impl ResidualLaw {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            ResidualLaw::Normal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ResidualLaw::Normal { sd } => sd * sd,
        }
    }
}

/// `intercept + slope * v + sd * N(0,1)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub intercept: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub sd: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            intercept: c,
            slope: 0.0,
            sd: 0.0,
        }
    }

    fn draw(&self, v: f64, rng: &mut Rng) -> f64 {
        let mut out = self.intercept + self.slope * v;
        if self.sd > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            out += self.sd * z;
        }
        out
    }
}

/// Law of `(a, eps)` given the first-stage residual: independent normals
/// whose means are affine in `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefGivenV {
    pub a: Affine,
    pub eps: Affine,
}

impl CoefGivenV {
    pub fn draw(&self, v: f64, rng: &mut Rng) -> (f64, f64) {
        let a = self.a.draw(v, rng);
        let eps = self.eps.draw(v, rng);
        (a, eps)
    }
}

/// Triangular system `X = g(Z) + V`, `Z` independent of `V`, with
/// `(a, eps) | V` given by [`CoefGivenV`]. Always semi-elasticity:
/// `log Y = a + eps * X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangularIVSpec {
    pub z_law: InstrumentLaw,
    pub g: FirstStage,
    pub v_law: ResidualLaw,
    pub coef_given_v: CoefGivenV,
}

impl TriangularIVSpec {
    pub fn validate(&self) -> Result<()> {
        self.z_law.validate()?;
        match self.v_law {
            ResidualLaw::Normal { sd } if !(sd >= 0.0 && sd.is_finite()) => {
                return Err(domain("residual sd must be >= 0"))
            }
            _ => {}
        }
        let c = &self.coef_given_v;
        if c.a.sd < 0.0 || c.eps.sd < 0.0 {
            return Err(domain("conditional coefficient sd must be >= 0"));
        }
        Ok(())
    }

    /// Marginal mean of `eps`, using `E[V] = 0`.
    pub fn eps_mean(&self) -> f64 {
        self.coef_given_v.eps.intercept
    }
}
