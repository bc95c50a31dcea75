//! Observationally equivalent twin designs with different arithmetic
//! semi-elasticities.
//!
//! Model A has a homogeneous semi-elasticity `beta0` and selection on
//! levels; model B has `a ~ N(0,1)` and `eps ~ N(beta0, sigma2)` independent
//! of everything. Both produce the same law of `log Y` given the treatment,
//! but `theta_A(x) = beta0` while `theta_B(x) = beta0 + sigma2 * x`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{domain, Result};
use crate::rng::{child_rng, Rng};

/// Twin datasets sharing one observable law.
#[derive(Debug, Clone)]
pub struct TwinDgps {
    pub data_a: Dataset,
    pub data_b: Dataset,
    pub beta0: f64,
    pub sigma2: f64,
}

impl TwinDgps {
    /// Arithmetic semi-elasticity of model A at `x`.
    pub fn theta_a(&self, _x: f64) -> f64 {
        self.beta0
    }

    /// Arithmetic semi-elasticity of model B at `x`.
    pub fn theta_b(&self, x: f64) -> f64 {
        self.beta0 + self.sigma2 * x
    }
}

fn check(beta0: f64, sigma2: f64, n: usize) -> Result<()> {
    if !beta0.is_finite() {
        return Err(domain("beta0 must be finite"));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(domain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if n == 0 {
        return Err(domain("n must be >= 1"));
    }
    Ok(())
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Binary treatment with a binary instrument: `Z ~ Bernoulli(1/2)`,
/// `X | Z ~ Bernoulli(0.3 + 0.4 Z)`. Model A draws `a | X ~ N(0, 1 + sigma2 X)`;
/// model B draws independent coefficients. The instrument is stored as `iv1`.
pub fn prop3_twin_dgps(beta0: f64, sigma2: f64, n: usize, seed: u64) -> Result<TwinDgps> {
    check(beta0, sigma2, n)?;
    let design = |rng: &mut Rng| {
        let z = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let x = if rng.random::<f64>() < 0.3 + 0.4 * z { 1.0 } else { 0.0 };
        (z, x)
    };

    let mut rng = child_rng(seed, "prop3_twin_a");
    let (mut y, mut x, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (zi, xi) = design(&mut rng);
        let a = (1.0 + sigma2 * xi).sqrt() * normal(&mut rng);
        y.push((a + beta0 * xi).exp());
        x.push(xi);
        z.push(zi);
    }
    let data_a = Dataset::with_columns(y, x, vec![], vec![z], None)?;

    let mut rng = child_rng(seed, "prop3_twin_b");
    let (mut y, mut x, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (zi, xi) = design(&mut rng);
        let a = normal(&mut rng);
        let eps = beta0 + sigma2.sqrt() * normal(&mut rng);
        y.push((a + eps * xi).exp());
        x.push(xi);
        z.push(zi);
    }
    let data_b = Dataset::with_columns(y, x, vec![], vec![z], None)?;

    Ok(TwinDgps {
        data_a,
        data_b,
        beta0,
        sigma2,
    })
}

/// Continuous triangular version: `X = 1 + Z + V` with `Z, V ~ N(0,1)`
/// independent. Model A keeps `eps = beta0` and draws
/// `a | V ~ N(0, 1 + sigma2 ((1 + V)^2 + 1))`, matching the first two moments
/// of `log Y` given `V` under model B. In both models the coefficients are
/// independent of `Z` given `V`, so `Z` is a valid instrument and `V` a valid
/// control function. The average semi-elasticities are `beta0` and
/// `beta0 + sigma2` (since `E[X] = 1`).
pub fn prop3_twin_triangular(beta0: f64, sigma2: f64, n: usize, seed: u64) -> Result<TwinDgps> {
    check(beta0, sigma2, n)?;
    let simulate = |tag: &str, model_a: bool| -> Result<Dataset> {
        let mut rng = child_rng(seed, tag);
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let zi = normal(&mut rng);
            let vi = normal(&mut rng);
            let xi = 1.0 + zi + vi;
            let log_y = if model_a {
                let sd = (1.0 + sigma2 * ((1.0 + vi).powi(2) + 1.0)).sqrt();
                sd * normal(&mut rng) + beta0 * xi
            } else {
                let a = normal(&mut rng);
                let eps = beta0 + sigma2.sqrt() * normal(&mut rng);
                a + eps * xi
            };
            y.push(log_y.exp());
            x.push(xi);
            z.push(zi);
            v.push(vi);
        }
        Dataset::with_columns(y, x, vec![], vec![z], Some(v))
    };
    Ok(TwinDgps {
        data_a: simulate("prop3_triangular_a", true)?,
        data_b: simulate("prop3_triangular_b", false)?,
        beta0,
        sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn arm(d: &Dataset, arm: f64) -> Vec<f64> {
        d.y.iter()
            .zip(&d.x)
            .filter(|(_, x)| **x == arm)
            .map(|(y, _)| y.ln())
            .collect()
    }

    #[test]
    fn theta_functions() {
        let t = prop3_twin_dgps(0.3, 0.5, 10, 1).unwrap();
        for x in [0.0, 1.0, 2.5] {
            assert_eq!(t.theta_a(x), 0.3);
            assert_eq!(t.theta_b(x), 0.3 + 0.5 * x);
        }
        assert_eq!(t.theta_b(1.0) - t.theta_a(1.0), 0.5);
    }

    #[test]
    fn treated_arms_share_a_law() {
        let t = prop3_twin_dgps(0.3, 0.5, 10_000, 4).unwrap();
        let ks = stats::ks_two_sample(&arm(&t.data_a, 1.0), &arm(&t.data_b, 1.0));
        assert!(ks.p_value > 0.01, "{ks:?}");
        let ks0 = stats::ks_two_sample(&arm(&t.data_a, 0.0), &arm(&t.data_b, 0.0));
        assert!(ks0.p_value > 0.01, "{ks0:?}");
    }

    #[test]
    fn moments_agree() {
        let n = 20_000;
        let t = prop3_twin_dgps(0.3, 0.5, n, 8).unwrap();
        let (la, lb) = (t.data_a.log_y(), t.data_b.log_y());
        let se = (stats::variance(&la) / n as f64).sqrt();
        assert!((stats::mean(&la) - stats::mean(&lb)).abs() < 4.0 * se * 2f64.sqrt());
        let va = stats::variance(&la);
        let vb = stats::variance(&lb);
        assert!((va - vb).abs() < 0.1 * va);
        let ca = stats::covariance(&la, &t.data_a.x);
        let cb = stats::covariance(&lb, &t.data_b.x);
        assert!((ca - cb).abs() < 0.03, "{ca} {cb}");
    }

    #[test]
    fn triangular_moments_given_v() {
        let n = 40_000;
        let t = prop3_twin_triangular(0.2, 0.25, n, 2).unwrap();
        let (la, lb) = (t.data_a.log_y(), t.data_b.log_y());
        assert!((stats::mean(&la) - stats::mean(&lb)).abs() < 0.05);
        let (va, vb) = (stats::variance(&la), stats::variance(&lb));
        assert!((va - vb).abs() < 0.08 * va, "{va} {vb}");
        let xa = &t.data_a.x;
        assert!((stats::mean(xa) - 1.0).abs() < 0.05);
    }

    #[test]
    fn invalid_parameters() {
        assert!(prop3_twin_dgps(0.1, 0.0, 10, 0).is_err());
        assert!(prop3_twin_triangular(0.1, -1.0, 10, 0).is_err());
    }
}
