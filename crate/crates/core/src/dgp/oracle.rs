//! Ground truth for power means and power-mean elasticities.
//!
//! Discrete coefficient laws are enumerated exactly; continuous laws use
//! Monte Carlo with importance-style ratio estimators
//! `sum(w * eps) / sum(w)` whose weights are `Y(x)^phi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg;
use crate::rng::{derive_indexed, rng_from, Rng};
use crate::stats::{self, pairwise_sum};

use super::spec::{Convention, PopulationSpec, RegressorLaw, TriangularIVSpec};

/// A Monte Carlo value with its standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        McEstimate {
            value,
            std_error: 0.0,
        }
    }
}

/// Exponent of a power mean; `Finite(0.0)` is the geometric mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerIndex {
    Finite(f64),
    Min,
    Max,
}

impl PowerIndex {
    pub const GEOMETRIC: PowerIndex = PowerIndex::Finite(0.0);
    pub const ARITHMETIC: PowerIndex = PowerIndex::Finite(1.0);
}

/// `(mean v^phi)^(1/phi)`, the geometric mean at `phi = 0`, and min/max in
/// the limits.
pub fn power_mean(values: &[f64], phi: PowerIndex) -> Result<f64> {
    if values.is_empty() {
        return Err(domain("power mean of an empty set"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(domain(format!("power mean needs positive finite values, got {v}")));
    }
    match phi {
        PowerIndex::Min => Ok(values.iter().copied().fold(f64::INFINITY, f64::min)),
        PowerIndex::Max => Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        PowerIndex::Finite(p) if p == 0.0 => {
            let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            Ok(stats::mean(&logs).exp())
        }
        PowerIndex::Finite(p) if p.is_finite() => {
            // log-sum-exp for stability at large |phi|
            let e: Vec<f64> = values.iter().map(|v| p * v.ln()).collect();
            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
            let log_mean = m + (pairwise_sum(&s) / values.len() as f64).ln();
            Ok((log_mean / p).exp())
        }
        PowerIndex::Finite(p) => Err(domain(format!("phi must be finite or a limit tag, got {p}"))),
    }
}

const MAX_EXPONENT: f64 = 709.78;
const CHUNK: usize = 4096;

/// Draws `count` items in fixed chunks with per-chunk derived seeds. The
/// output is independent of how many worker threads run.
fn chunked_draws<T: Send>(
    count: usize,
    seed: u64,
    tag: &str,
    draw: impl Fn(&mut Rng) -> T + Sync,
) -> Vec<T> {
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(derive_indexed(seed, tag, c as u64));
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Ratio `sum(w v) / sum(w)` with `w = exp(log_w)`, its delta-method
/// standard error, and the heavy-tail guard.
fn weighted_ratio(log_w: &[f64], values: &[f64], probs: Option<&[f64]>) -> Result<McEstimate> {
    if let Some(bad) = log_w.iter().find(|e| !e.is_finite() || **e > MAX_EXPONENT) {
        return Err(Error::NonFiniteMoment(format!(
            "log weight {bad} overflows; the moment E[Y^phi] is not representable"
        )));
    }
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = match probs {
        Some(p) => log_w.iter().zip(p).map(|(e, p)| p * (e - m).exp()).collect(),
        None => log_w.iter().map(|e| (e - m).exp()).collect(),
    };
    let sw = pairwise_sum(&w);
    let wv: Vec<f64> = w.iter().zip(values).map(|(w, v)| w * v).collect();
    let ratio = pairwise_sum(&wv) / sw;
    if probs.is_some() {
        return Ok(McEstimate::exact(ratio));
    }
    let max_share = w.iter().copied().fold(0.0, f64::max) / sw;
    if w.len() > 1 && max_share > 0.5 {
        return Err(Error::NonFiniteMoment(format!(
            "a single draw carries {:.0}% of the weight; E[Y^phi] is likely infinite",
            100.0 * max_share
        )));
    }
    let sq: Vec<f64> = w
        .iter()
        .zip(values)
        .map(|(w, v)| (w * (v - ratio)).powi(2))
        .collect();
    Ok(McEstimate {
        value: ratio,
        std_error: pairwise_sum(&sq).sqrt() / sw,
    })
}

struct Individuals {
    a: Vec<f64>,
    eps: Vec<f64>,
    probs: Option<Vec<f64>>,
}

fn individuals(spec: &PopulationSpec, draws: usize, seed: u64, tag: &str) -> Result<Individuals> {
    spec.validate()?;
    if spec.noise_law.is_none() {
        if let Some(atoms) = spec.coef_law.atoms() {
            return Ok(Individuals {
                a: atoms.iter().map(|t| t.0).collect(),
                eps: atoms.iter().map(|t| t.1).collect(),
                probs: Some(atoms.iter().map(|t| t.2).collect()),
            });
        }
    }
    if draws == 0 {
        return Err(domain("draws must be >= 1"));
    }
    let pairs = chunked_draws(draws, seed, tag, |rng| spec.draw_individual(rng));
    Ok(Individuals {
        a: pairs.iter().map(|p| p.0).collect(),
        eps: pairs.iter().map(|p| p.1).collect(),
        probs: None,
    })
}

fn check_level(x: f64, convention: Convention) -> Result<f64> {
    if convention == Convention::Elasticity && !(x > 0.0 && x.is_finite()) {
        return Err(domain(format!("x must be > 0, got {x}")));
    }
    Ok(convention.transform(x))
}

/// `E[Y(x)^phi eps] / E[Y(x)^phi]`, the elasticity of the phi-power mean.
pub fn power_mean_elasticity_mc(
    spec: &PopulationSpec,
    phi: f64,
    x: f64,
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !phi.is_finite() {
        return Err(domain("phi must be finite"));
    }
    let t = check_level(x, spec.convention)?;
    let ind = individuals(spec, draws, seed, "power_mean_elasticity")?;
    let log_w: Vec<f64> = ind
        .a
        .iter()
        .zip(&ind.eps)
        .map(|(a, e)| phi * (a + e * t))
        .collect();
    weighted_ratio(&log_w, &ind.eps, ind.probs.as_deref())
}

/// `eps_mean + phi * eps_var * log x`, the Gaussian closed form.
pub fn gaussian_closed_form_elasticity(eps_mean: f64, eps_var: f64, phi: f64, x: f64) -> Result<f64> {
    if eps_var < 0.0 {
        return Err(domain(format!("eps_var must be >= 0, got {eps_var}")));
    }
    if !(x > 0.0) {
        return Err(domain(format!("x must be > 0, got {x}")));
    }
    Ok(eps_mean + phi * eps_var * x.ln())
}

/// Arithmetic minus geometric elasticity at `x`, computed as the
/// level-tilted mean of the centred elasticities.
pub fn wedge(spec: &PopulationSpec, x: f64, draws: usize, seed: u64) -> Result<McEstimate> {
    let t = check_level(x, spec.convention)?;
    let ind = individuals(spec, draws, seed, "wedge")?;
    let centre = spec.coef_law.eps_mean();
    let centred: Vec<f64> = ind.eps.iter().map(|e| e - centre).collect();
    let log_w: Vec<f64> = ind
        .a
        .iter()
        .zip(&ind.eps)
        .map(|(a, e)| a + e * t)
        .collect();
    weighted_ratio(&log_w, &centred, ind.probs.as_deref())
}

/// Derivative of the arithmetic elasticity with respect to `t(x)`: the
/// level-weighted variance of individual elasticities.
pub fn arithmetic_elasticity_slope(
    spec: &PopulationSpec,
    x: f64,
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    let t = check_level(x, spec.convention)?;
    let ind = individuals(spec, draws, seed, "wedge")?;
    let log_w: Vec<f64> = ind
        .a
        .iter()
        .zip(&ind.eps)
        .map(|(a, e)| a + e * t)
        .collect();
    let mean = weighted_ratio(&log_w, &ind.eps, ind.probs.as_deref())?.value;
    let sq: Vec<f64> = ind.eps.iter().map(|e| (e - mean).powi(2)).collect();
    weighted_ratio(&log_w, &sq, ind.probs.as_deref())
}

/// Marginal value of public funds `1 / (1 - tau/(1-tau) * z * eps)`.
pub fn mvpf(tau: f64, z: f64, eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(domain(format!("tau must lie in [0,1), got {tau}")));
    }
    if !(z > 0.0) {
        return Err(domain(format!("Pareto parameter must be > 0, got {z}")));
    }
    let den = 1.0 - tau / (1.0 - tau) * z * eps;
    if den.abs() < 1e-12 {
        return Err(Error::Singularity);
    }
    Ok(1.0 / den)
}

/// Ground truth for the average arithmetic (semi-)elasticity.
pub trait ElasticityOracle {
    /// `E_X[theta(X)]` where `theta(x)` is the elasticity of the arithmetic
    /// mean at `x`, averaged over the law that generated the regressor.
    fn true_average_arithmetic_elasticity(&self, draws: usize, seed: u64) -> Result<McEstimate>;
}

const OUTER_POINTS: usize = 400;

/// Midpoint quantile grid of the transformed regressor, with weights.
fn regressor_grid(law: &RegressorLaw, convention: Convention) -> Vec<(f64, f64)> {
    match *law {
        RegressorLaw::Fixed { x } => vec![(convention.transform(x), 1.0)],
        RegressorLaw::Bernoulli { p } => vec![(0.0, 1.0 - p), (1.0, p)],
        RegressorLaw::LogUniform { lo, hi } => (0..OUTER_POINTS)
            .map(|j| {
                let u = (j as f64 + 0.5) / OUTER_POINTS as f64;
                let log_x = lo.ln() + u * (hi.ln() - lo.ln());
                let t = match convention {
                    Convention::Elasticity => log_x,
                    Convention::SemiElasticity => log_x.exp(),
                };
                (t, 1.0 / OUTER_POINTS as f64)
            })
            .collect(),
        RegressorLaw::Normal { mean, sd } => (0..OUTER_POINTS)
            .map(|j| {
                let u = (j as f64 + 0.5) / OUTER_POINTS as f64;
                (mean + sd * stats::normal_quantile(u), 1.0 / OUTER_POINTS as f64)
            })
            .collect(),
    }
}

impl ElasticityOracle for PopulationSpec {
    /// Outer integral by midpoint quadrature over the regressor law, inner
    /// expectation by Monte Carlo (exact for discrete coefficient laws) with
    /// common draws across grid points.
    fn true_average_arithmetic_elasticity(&self, draws: usize, seed: u64) -> Result<McEstimate> {
        let ind = individuals(self, draws, seed, "average_arithmetic_elasticity")?;
        let grid = regressor_grid(&self.regressor_law, self.convention);
        let per_point = grid
            .par_iter()
            .map(|(t, _)| {
                let log_w: Vec<f64> = ind.a.iter().zip(&ind.eps).map(|(a, e)| a + e * t).collect();
                weighted_ratio(&log_w, &ind.eps, ind.probs.as_deref())
            })
            .collect::<Result<Vec<_>>>()?;
        let value: f64 = grid.iter().zip(&per_point).map(|((_, w), r)| w * r.value).sum();
        // Inner errors are positively correlated across grid points through
        // the common draws, so they are averaged rather than pooled.
        let std_error: f64 = grid.iter().zip(&per_point).map(|((_, w), r)| w * r.std_error).sum();
        Ok(McEstimate { value, std_error })
    }
}

impl TriangularIVSpec {
    /// Population projection of `log Y` on `(1, X, V)`: `(intercept, beta, rho)`.
    pub fn control_function_projection(&self, draws: usize, seed: u64) -> Result<[f64; 3]> {
        let rows = chunked_draws(draws, seed, "cf_projection", |rng| {
            let z = self.z_law.draw(rng);
            let v = self.v_law.draw(rng);
            let x = self.g.eval(z) + v;
            let (a, e) = self.coef_given_v.draw(v, rng);
            (a + e * x, x, v)
        });
        let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let cols = vec![
            vec![1.0; rows.len()],
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
        ];
        let names = ["const", "x", "v"].map(String::from);
        let beta = linalg::least_squares(&cols, &names, &y)?;
        Ok([beta[0], beta[1], beta[2]])
    }

    fn tilted_average(&self, rho: f64, draws: usize, seed: u64) -> Result<McEstimate> {
        self.validate()?;
        if draws == 0 {
            return Err(domain("draws must be >= 1"));
        }
        let inner = chunked_draws(draws, seed, "structural_inner", |rng| {
            let v = self.v_law.draw(rng);
            let (a, e) = self.coef_given_v.draw(v, rng);
            (a - rho * v, e)
        });
        // midpoint quantiles of a large sample of X stand in for its law
        let outer_n = draws.max(OUTER_POINTS);
        let mut sample = chunked_draws(outer_n, seed, "structural_outer", |rng| {
            let z = self.z_law.draw(rng);
            self.g.eval(z) + self.v_law.draw(rng)
        });
        sample.sort_by(f64::total_cmp);
        let xs: Vec<f64> = (0..OUTER_POINTS)
            .map(|g| sample[((g as f64 + 0.5) * outer_n as f64 / OUTER_POINTS as f64) as usize])
            .collect();
        let eps: Vec<f64> = inner.iter().map(|p| p.1).collect();
        let per_x = xs
            .par_iter()
            .map(|x| {
                let log_w: Vec<f64> = inner.iter().map(|(a, e)| a + e * x).collect();
                weighted_ratio(&log_w, &eps, None)
            })
            .collect::<Result<Vec<_>>>()?;
        let thetas: Vec<f64> = per_x.iter().map(|r| r.value).collect();
        let inner_se = stats::mean(&per_x.iter().map(|r| r.std_error).collect::<Vec<_>>());
        let outer_se = stats::std_dev(&thetas) / (outer_n as f64).sqrt();
        Ok(McEstimate {
            value: stats::mean(&thetas),
            std_error: (inner_se.powi(2) + outer_se.powi(2)).sqrt(),
        })
    }

    /// Average causal arithmetic semi-elasticity `E_X[d log E[Y(x)]/dx]`,
    /// integrating the potential outcome over the marginal law of `(a, eps)`.
    pub fn causal_average_semi_elasticity(&self, draws: usize, seed: u64) -> Result<McEstimate> {
        self.tilted_average(0.0, draws, seed)
    }
}

impl ElasticityOracle for TriangularIVSpec {
    /// The control-function estimand `E[beta + mu'(X)/mu(X)]` with
    /// `mu(x) = E_V[m(x, V)]` and `m(x, v) = E[exp(u) | x, v]`, where `u` is
    /// the residual of the population projection of `log Y` on `(1, X, V)`.
    /// Equals the causal estimand when the elasticity is independent of `V`.
    fn true_average_arithmetic_elasticity(&self, draws: usize, seed: u64) -> Result<McEstimate> {
        let proj = self.control_function_projection(draws.max(100_000), seed)?;
        self.tilted_average(proj[2], draws, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::spec::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    fn two_agent() -> PopulationSpec {
        PopulationSpec::new(
            CoefLaw::TwoPoint {
                a1: 1000f64.ln(),
                eps1: 0.3,
                a2: 10000f64.ln(),
                eps2: 0.1,
                p: 0.5,
            },
            RegressorLaw::Fixed { x: 1.0 },
        )
    }

    fn gaussian(eps_var: f64) -> PopulationSpec {
        PopulationSpec::new(
            CoefLaw::GaussianIndep {
                a_const: 0.0,
                eps_mean: 0.5,
                eps_var,
            },
            RegressorLaw::LogUniform { lo: 1.0, hi: E * E },
        )
    }

    #[test]
    fn power_mean_examples() {
        let v = [1.0, 4.0];
        assert_abs_diff_eq!(power_mean(&v, PowerIndex::ARITHMETIC).unwrap(), 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(power_mean(&v, PowerIndex::GEOMETRIC).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(power_mean(&v, PowerIndex::Min).unwrap(), 1.0);
        assert_eq!(power_mean(&v, PowerIndex::Max).unwrap(), 4.0);
        assert!(power_mean(&[1.0, 0.0], PowerIndex::ARITHMETIC).is_err());
        assert!(power_mean(&[1.0, -2.0], PowerIndex::GEOMETRIC).is_err());
    }

    #[test]
    fn two_agent_arithmetic_and_geometric() {
        let s = two_agent();
        let r = power_mean_elasticity_mc(&s, 1.0, 1.0, 1, 0).unwrap();
        assert_abs_diff_eq!(r.value, 1300.0 / 11000.0, epsilon = 1e-12);
        assert_eq!(r.std_error, 0.0);
        for x in [0.5, 1.0, 3.0, 100.0] {
            let g = power_mean_elasticity_mc(&s, 0.0, x, 1, 0).unwrap();
            assert_abs_diff_eq!(g.value, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(gaussian_closed_form_elasticity(0.3, 0.7, 2.0, 1.0).unwrap(), 0.3);
        assert_eq!(gaussian_closed_form_elasticity(0.3, 0.7, 0.0, 9.0).unwrap(), 0.3);
        assert_abs_diff_eq!(gaussian_closed_form_elasticity(0.5, 0.04, 1.0, E).unwrap(), 0.54, epsilon = 1e-12);
        assert!(gaussian_closed_form_elasticity(0.5, -0.1, 1.0, E).is_err());
    }

    #[test]
    fn mc_matches_closed_form() {
        let r = power_mean_elasticity_mc(&gaussian(0.04), 1.0, E, 1_000_000, 3).unwrap();
        assert!((r.value - 0.54).abs() < 4.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn geometric_elasticity_constant_in_x() {
        let s = PopulationSpec::new(
            CoefLaw::BivariateGaussian {
                mean: [0.0, 0.4],
                cov: [[0.5, 0.2], [0.2, 0.3]],
            },
            RegressorLaw::Fixed { x: 1.0 },
        );
        for x in [0.2, 1.0, 5.0, 40.0] {
            let r = power_mean_elasticity_mc(&s, 0.0, x, 200_000, 9).unwrap();
            assert!((r.value - 0.4).abs() < 4.0 * r.std_error, "x={x}: {r:?}");
        }
    }

    #[test]
    fn heavy_tail_is_reported() {
        let s = PopulationSpec::new(
            CoefLaw::GaussianIndep {
                a_const: 0.0,
                eps_mean: 0.0,
                eps_var: 25.0,
            },
            RegressorLaw::Fixed { x: 1.0 },
        );
        let err = power_mean_elasticity_mc(&s, 1.0, 1e30, 10_000, 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteMoment(_)));
    }

    #[test]
    fn wedge_vanishes_for_degenerate_eps() {
        let s = PopulationSpec::new(CoefLaw::Degenerate { a: 0.3, eps: 0.7 }, RegressorLaw::Fixed { x: 1.0 })
            .with_noise(NoiseLaw::Gaussian { sd: 0.5 });
        for x in [0.5, 2.0, 10.0] {
            let w = wedge(&s, x, 10_000, 1).unwrap();
            assert_abs_diff_eq!(w.value, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn wedge_gaussian_is_var_log_x() {
        let s = gaussian(0.25);
        let x = 3.0;
        let w = wedge(&s, x, 500_000, 4).unwrap();
        assert!((w.value - 0.25 * x.ln()).abs() < 4.0 * w.std_error, "{w:?}");
    }

    #[test]
    fn wedge_slope_nonnegative_and_equals_variance() {
        let s = PopulationSpec::new(
            CoefLaw::TwoPoint {
                a1: 0.0,
                eps1: 0.9,
                a2: 0.0,
                eps2: -0.2,
                p: 0.3,
            },
            RegressorLaw::Fixed { x: 1.0 },
        );
        let slope = arithmetic_elasticity_slope(&s, 1.0, 1, 0).unwrap();
        assert_abs_diff_eq!(slope.value, s.coef_law.eps_var(), epsilon = 1e-12);
        // finite-difference oracle on the exact wedge
        let h: f64 = 1e-4;
        let up = wedge(&s, h.exp(), 1, 0).unwrap().value;
        let dn = wedge(&s, (-h).exp(), 1, 0).unwrap().value;
        let fd = (up - dn) / (2.0 * h);
        assert!(fd >= 0.0);
        assert_abs_diff_eq!(fd, slope.value, epsilon = 1e-6);

        let g = gaussian(0.09);
        let mc = arithmetic_elasticity_slope(&g, 1.0, 400_000, 2).unwrap();
        assert!((mc.value - 0.09).abs() < 4.0 * mc.std_error, "{mc:?}");
    }

    #[test]
    fn average_arithmetic_elasticity_examples() {
        let deg = PopulationSpec::new(CoefLaw::Degenerate { a: 0.0, eps: 0.8 }, RegressorLaw::LogUniform { lo: 1.0, hi: 4.0 });
        assert_abs_diff_eq!(deg.true_average_arithmetic_elasticity(10, 0).unwrap().value, 0.8, epsilon = 1e-12);

        let g = gaussian(0.25);
        let r = g.true_average_arithmetic_elasticity(200_000, 5).unwrap();
        assert!((r.value - 0.75).abs() < 4.0 * r.std_error + 1e-4, "{r:?}");

        let t = two_agent().true_average_arithmetic_elasticity(1, 0).unwrap();
        assert_abs_diff_eq!(t.value, 1300.0 / 11000.0, epsilon = 1e-12);
    }

    #[test]
    fn mvpf_examples() {
        assert_eq!(mvpf(0.0, 3.0, 0.7).unwrap(), 1.0);
        assert_abs_diff_eq!(mvpf(0.5, 2.0, 0.2).unwrap(), 1.0 / 0.6, epsilon = 1e-12);
        assert_eq!(mvpf(0.4, 2.0, 0.0).unwrap(), 1.0);
        assert!(matches!(mvpf(0.5, 2.0, 0.5), Err(Error::Singularity)));
        assert!(mvpf(1.0, 2.0, 0.5).is_err());
    }

    fn triangular(eps_slope: f64, a_slope: f64, intercept: f64) -> TriangularIVSpec {
        TriangularIVSpec {
            z_law: InstrumentLaw::Normal { mean: 0.0, sd: 1.0 },
            g: FirstStage::Linear { slope: 1.0, intercept },
            v_law: ResidualLaw::Normal { sd: 0.5 },
            coef_given_v: CoefGivenV {
                a: Affine { intercept: 0.0, slope: a_slope, sd: 0.2 },
                eps: Affine { intercept: 0.5, slope: eps_slope, sd: 0.2 },
            },
        }
    }

    #[test]
    fn control_function_projection_gaussian() {
        // beta = eps intercept, rho = a_slope + eps_slope * E[X]
        let s = triangular(0.5, 0.5, 0.5);
        let p = s.control_function_projection(400_000, 1).unwrap();
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 0.01);
        assert_abs_diff_eq!(p[2], 0.75, epsilon = 0.01);
    }

    #[test]
    fn structural_oracle_closed_forms() {
        // Structural: eps_mean + eps_sd^2 * E[X]; causal adds var(V) * eps_slope * rho.
        let s = triangular(0.5, 0.5, 0.5);
        let st = s.true_average_arithmetic_elasticity(100_000, 2).unwrap();
        assert!((st.value - 0.52).abs() < 4.0 * st.std_error + 0.005, "{st:?}");
        let ca = s.causal_average_semi_elasticity(100_000, 2).unwrap();
        let expected = 0.52 + 0.25 * 0.5 * 0.75;
        assert!((ca.value - expected).abs() < 4.0 * ca.std_error + 0.005, "{ca:?}");

        // eps independent of V: the two coincide.
        let s = triangular(0.0, 0.8, 1.0);
        let st = s.true_average_arithmetic_elasticity(100_000, 3).unwrap();
        let ca = s.causal_average_semi_elasticity(100_000, 3).unwrap();
        assert!((st.value - ca.value).abs() < 0.005, "{st:?} {ca:?}");
        assert!((st.value - 0.54).abs() < 4.0 * st.std_error + 0.005);
    }
}
