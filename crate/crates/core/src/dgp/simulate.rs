use crate::data::Dataset;
use crate::error::{domain, Result};
use crate::rng::child_rng;

use super::spec::{PopulationSpec, TriangularIVSpec};

fn level(log_y: f64, row: usize) -> Result<f64> {
    let y = log_y.exp();
    if y.is_finite() && y > 0.0 {
        Ok(y)
    } else {
        Err(domain(format!(
            "simulated log outcome {log_y:.3} at row {row} is outside the representable range"
        )))
    }
}

/// Draws `n` rows of `log y = a + eps * t(x) (+ noise)`.
pub fn simulate_cross_section(spec: &PopulationSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(domain("n must be >= 1"));
    }
    let mut rng = child_rng(seed, "simulate_cross_section");
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for row in 0..n {
        let t = spec.regressor_law.draw_transformed(spec.convention, &mut rng);
        let (a, eps) = spec.draw_individual(&mut rng);
        y.push(level(a + eps * t, row)?);
        x.push(t);
    }
    Dataset::new(y, x)
}

/// Simulation-only draws behind a triangular dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub a: Vec<f64>,
    pub eps: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn simulate_triangular_iv(spec: &TriangularIVSpec, n: usize, seed: u64) -> Result<Dataset> {
    simulate_triangular_iv_with_latents(spec, n, seed).map(|(d, _)| d)
}

/// Draws `Z`, `V` independently, sets `X = g(Z) + V`, then `(a, eps) | V`
/// and `log Y = a + eps * X`. The instrument is stored as `iv1` and `V` as
/// `v_true`.
pub fn simulate_triangular_iv_with_latents(
    spec: &TriangularIVSpec,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Latents)> {
    spec.validate()?;
    if n == 0 {
        return Err(domain("n must be >= 1"));
    }
    let mut rng = child_rng(seed, "simulate_triangular_iv");
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut lat = Latents {
        a: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for row in 0..n {
        let zi = spec.z_law.draw(&mut rng);
        let vi = spec.v_law.draw(&mut rng);
        let xi = spec.g.eval(zi) + vi;
        let (a, eps) = spec.coef_given_v.draw(vi, &mut rng);
        y.push(level(a + eps * xi, row)?);
        x.push(xi);
        z.push(zi);
        lat.a.push(a);
        lat.eps.push(eps);
        lat.v.push(vi);
    }
    let d = Dataset::with_columns(y, x, vec![], vec![z], Some(lat.v.clone()))?;
    Ok((d, lat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::spec::*;
    use crate::stats;
    use std::f64::consts::E;

    #[test]
    fn unit_elasticity_at_fixed_x() {
        let spec = PopulationSpec::new(
            CoefLaw::Degenerate { a: 0.0, eps: 1.0 },
            RegressorLaw::Fixed { x: 2.0 },
        );
        let d = simulate_cross_section(&spec, 3, 1).unwrap();
        for y in &d.y {
            assert!((y - 2.0).abs() < 1e-14);
        }
        assert!(d.v_true.is_none());
    }

    #[test]
    fn zero_elasticity_ignores_x() {
        let spec = PopulationSpec::new(
            CoefLaw::Degenerate { a: 1.0, eps: 0.0 },
            RegressorLaw::LogUniform { lo: 1.0, hi: E },
        );
        let d = simulate_cross_section(&spec, 5, 2).unwrap();
        for y in &d.y {
            assert!((y - E).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_elasticities_average_out() {
        let spec = PopulationSpec::new(
            CoefLaw::GaussianIndep {
                a_const: 0.0,
                eps_mean: 0.5,
                eps_var: 0.04,
            },
            RegressorLaw::LogUniform { lo: 1.0, hi: E * E },
        );
        let d = simulate_cross_section(&spec, 10_000, 7).unwrap();
        let ratios: Vec<f64> = d.y.iter().zip(&d.x).map(|(y, x)| y.ln() / x).collect();
        let m = stats::mean(&ratios);
        assert!((m - 0.5).abs() < 3.0 * 0.2 / 100.0, "mean {m}");
    }

    #[test]
    fn invalid_spec_is_domain_error() {
        let spec = PopulationSpec::new(
            CoefLaw::GaussianIndep {
                a_const: 0.0,
                eps_mean: 0.5,
                eps_var: -1.0,
            },
            RegressorLaw::Fixed { x: 1.0 },
        );
        assert!(matches!(
            simulate_cross_section(&spec, 3, 0),
            Err(crate::Error::Domain(_))
        ));
        let spec = PopulationSpec::new(
            CoefLaw::Degenerate { a: 0.0, eps: 1.0 },
            RegressorLaw::LogUniform { lo: 0.0, hi: 1.0 },
        );
        assert!(simulate_cross_section(&spec, 3, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = PopulationSpec::new(
            CoefLaw::BivariateGaussian {
                mean: [0.0, 0.5],
                cov: [[0.3, 0.1], [0.1, 0.2]],
            },
            RegressorLaw::LogUniform { lo: 1.0, hi: 5.0 },
        )
        .with_noise(NoiseLaw::Gaussian { sd: 0.2 });
        let a = simulate_cross_section(&spec, 50, 11).unwrap();
        let b = simulate_cross_section(&spec, 50, 11).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let c = simulate_cross_section(&spec, 50, 12).unwrap();
        assert_ne!(a, c);
    }

    fn iv_spec(eps_slope: f64, eps_sd: f64) -> TriangularIVSpec {
        TriangularIVSpec {
            z_law: InstrumentLaw::Normal { mean: 0.0, sd: 1.0 },
            g: FirstStage::Linear {
                slope: 1.0,
                intercept: 0.0,
            },
            v_law: ResidualLaw::Normal { sd: 0.5 },
            coef_given_v: CoefGivenV {
                a: Affine::constant(0.0),
                eps: Affine {
                    intercept: 0.5,
                    slope: eps_slope,
                    sd: eps_sd,
                },
            },
        }
    }

    #[test]
    fn triangular_independent_coefficients() {
        let n = 10_000;
        let (d, lat) = simulate_triangular_iv_with_latents(&iv_spec(0.0, 0.2), n, 3).unwrap();
        assert!(d.has_instruments());
        let r = stats::correlation(&lat.eps, d.v_true.as_ref().unwrap());
        assert!(r.abs() < 3.0 / (n as f64).sqrt(), "corr {r}");
    }

    #[test]
    fn triangular_variance_addition() {
        let n = 20_000;
        let (d, _) = simulate_triangular_iv_with_latents(&iv_spec(0.0, 0.0), n, 4).unwrap();
        let v = stats::variance(&d.x);
        // Var of a sample variance for Gaussian data is 2 sigma^4 / n.
        let se = (2.0 * 1.25f64.powi(2) / n as f64).sqrt();
        assert!((v - 1.25).abs() < 3.0 * se, "var {v}");
    }

    #[test]
    fn triangular_eps_slope_moment() {
        let n = 20_000;
        let (_, lat) = simulate_triangular_iv_with_latents(&iv_spec(1.0, 0.1), n, 5).unwrap();
        let c = stats::covariance(&lat.eps, &lat.v);
        // cov(eps, v) = slope * var(v); sd of the product moment ~ sqrt((0.25*0.26 + 0.0625)/n)
        let se = ((0.25 * 0.26 + 0.25 * 0.25) / n as f64).sqrt();
        assert!((c - 0.25).abs() < 3.0 * se, "cov {c}");
    }
}
