//! Tests of the difference between two estimators computed on the same
//! sample, and a summary over batches of such comparisons.
//!
//! Both estimators are asymptotically linear, so the difference is too; its
//! variance is estimated from the per-observation difference of influence
//! values, which accounts for the dependence induced by the shared sample.

use serde::{Deserialize, Serialize};

use crate::baseline::FitResult;
use crate::error::{domain, Error, Result};
use crate::report::EstimateReport;
use crate::stats;

pub use crate::dgp::mvpf;

/// Scale on which the baseline coefficient is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `beta` against `theta`.
    Continuous,
    /// `exp(beta) - 1` against `theta`, for a binary treatment.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub estimate_a: f64,
    pub estimate_b: f64,
    /// `estimate_a - estimate_b`
    pub difference: f64,
    pub se_difference: f64,
    pub z_stat: f64,
    pub p_value: f64,
    pub convention: Convention,
    pub level: f64,
    pub significant: bool,
    /// Strictly opposite signs and a significant difference.
    pub sign_flip: bool,
}

/// Relative size below which a difference and its standard error are
/// treated as an exact identity.
const IDENTITY_TOL: f64 = 1e-10;

/// Compares two asymptotically linear estimates with per-observation
/// influence values on the same rows.
pub fn compare_influences(
    a: f64,
    infl_a: &[f64],
    b: f64,
    infl_b: &[f64],
    convention: Convention,
    level: f64,
) -> Result<ComparisonResult> {
    if infl_a.len() != infl_b.len() {
        return Err(Error::Mismatch(format!(
            "influence values cover {} and {} observations",
            infl_a.len(),
            infl_b.len()
        )));
    }
    if infl_a.is_empty() {
        return Err(domain("no observations to compare"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(domain(format!("level must lie in (0,1), got {level}")));
    }
    let n = infl_a.len() as f64;
    let d: Vec<f64> = infl_a.iter().zip(infl_b).map(|(x, y)| x - y).collect();
    let centre = stats::mean(&d);
    let ss: f64 = d.iter().map(|v| (v - centre).powi(2)).sum();
    let se = ss.sqrt() / n;
    let difference = a - b;
    let scale = 1.0 + a.abs() + b.abs();
    let z = if se > IDENTITY_TOL * scale {
        difference / se
    } else if difference.abs() <= IDENTITY_TOL * scale {
        0.0
    } else {
        difference.signum() * f64::INFINITY
    };
    let p = stats::two_sided_p(z).clamp(0.0, 1.0);
    let significant = p < level;
    Ok(ComparisonResult {
        estimate_a: a,
        estimate_b: b,
        difference,
        se_difference: se,
        z_stat: z,
        p_value: p,
        convention,
        level,
        significant,
        sign_flip: significant && a * b < 0.0,
    })
}

fn check_n(fit: &FitResult, report: &EstimateReport) -> Result<()> {
    if fit.n() != report.scores.len() {
        return Err(Error::Mismatch(format!(
            "baseline fit has {} observations, report has {} scores",
            fit.n(),
            report.scores.len()
        )));
    }
    Ok(())
}

/// `H0: beta = theta` for the treatment coefficient of `fit`.
pub fn compare_continuous(fit: &FitResult, report: &EstimateReport, level: f64) -> Result<ComparisonResult> {
    check_n(fit, report)?;
    compare_influences(
        fit.slope(),
        &fit.treatment_influence(),
        report.theta,
        &report.scores,
        Convention::Continuous,
        level,
    )
}

/// `H0: exp(beta) - 1 = theta`, with the delta method on `exp(beta) - 1`.
pub fn compare_discrete(fit: &FitResult, report: &EstimateReport, level: f64) -> Result<ComparisonResult> {
    check_n(fit, report)?;
    let e = fit.slope().exp();
    let infl: Vec<f64> = fit.treatment_influence().iter().map(|v| e * v).collect();
    compare_influences(e - 1.0, &infl, report.theta, &report.scores, Convention::Discrete, level)
}

/// Compares two reports, e.g. read back from disk. Under the discrete
/// convention `a` is mapped to `exp(a) - 1`.
pub fn compare_reports(
    a: &EstimateReport,
    b: &EstimateReport,
    convention: Convention,
    level: f64,
) -> Result<ComparisonResult> {
    match convention {
        Convention::Continuous => compare_influences(a.theta, &a.scores, b.theta, &b.scores, convention, level),
        Convention::Discrete => {
            let e = a.theta.exp();
            let infl: Vec<f64> = a.scores.iter().map(|v| e * v).collect();
            compare_influences(e - 1.0, &infl, b.theta, &b.scores, convention, level)
        }
    }
}

/// Counts of significant differences across a batch. Increase and
/// decrease compare `|estimate_b|` with `|estimate_a|` among significant
/// results without a sign change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub label: String,
    pub no_change: usize,
    pub sig_different: usize,
    pub effect_increase: usize,
    pub effect_decrease: usize,
    pub sign_change: usize,
}

pub const BATCH_CSV_HEADER: &str = "comparison,No Change,Sig. Different,Effect Increase,Effect Decrease,Sign Change";

pub fn summarize_batch(results: &[ComparisonResult]) -> Result<BatchSummary> {
    if results.is_empty() {
        return Err(domain("empty batch"));
    }
    let mut s = BatchSummary::default();
    for r in results {
        if !r.significant {
            s.no_change += 1;
            continue;
        }
        s.sig_different += 1;
        if r.sign_flip {
            s.sign_change += 1;
        } else if r.estimate_b.abs() > r.estimate_a.abs() {
            s.effect_increase += 1;
        } else {
            s.effect_decrease += 1;
        }
    }
    Ok(s)
}

impl BatchSummary {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.label, self.no_change, self.sig_different, self.effect_increase, self.effect_decrease, self.sign_change
        )
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!("{BATCH_CSV_HEADER}\n{}\n", self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{manning_binary, ols_loglog, ppml, PPML_MAX_ITER, PPML_TOL};
    use crate::data::Dataset;
    use crate::rng::child_rng;
    use rand::Rng as _;

    fn result(a: f64, b: f64, p: f64) -> ComparisonResult {
        ComparisonResult {
            estimate_a: a,
            estimate_b: b,
            difference: a - b,
            se_difference: 0.1,
            z_stat: 0.0,
            p_value: p,
            convention: Convention::Continuous,
            level: 0.05,
            significant: p < 0.05,
            sign_flip: p < 0.05 && a * b < 0.0,
        }
    }

    #[test]
    fn identical_contributions() {
        let s = [0.1, -0.3, 0.2];
        let r = compare_influences(0.7, &s, 0.7, &s, Convention::Continuous, 0.05).unwrap();
        assert_eq!(r.difference, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant && !r.sign_flip);
    }

    #[test]
    fn discrete_zero() {
        let s = [0.1, -0.1];
        let r = compare_influences(0f64.exp() - 1.0, &s, 0.0, &s, Convention::Discrete, 0.05).unwrap();
        assert_eq!(r.difference, 0.0);
    }

    #[test]
    fn symmetry() {
        let a = [0.3, -0.1, 0.4, -0.6];
        let b = [0.1, 0.2, -0.5, 0.2];
        let r1 = compare_influences(1.0, &a, 0.4, &b, Convention::Continuous, 0.05).unwrap();
        let r2 = compare_influences(0.4, &b, 1.0, &a, Convention::Continuous, 0.05).unwrap();
        assert_eq!(r1.difference, -r2.difference);
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.se_difference, r2.se_difference);
    }

    #[test]
    fn hand_computed_statistic() {
        // d = (0.2, -0.4, 0.5, -0.3), centred ss = 0.54, se = sqrt(0.54)/4
        let a = [0.3, -0.1, 0.4, -0.6];
        let b = [0.1, 0.3, -0.1, -0.3];
        let r = compare_influences(1.0, &a, 0.5, &b, Convention::Continuous, 0.05).unwrap();
        let se = 0.54f64.sqrt() / 4.0;
        assert!((r.se_difference - se).abs() < 1e-15);
        assert!((r.z_stat - 0.5 / se).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths() {
        assert!(matches!(
            compare_influences(0.0, &[1.0], 0.0, &[1.0, 2.0], Convention::Continuous, 0.05),
            Err(Error::Mismatch(_))
        ));
    }

    fn binary(seed: u64, n: usize) -> Dataset {
        let mut r = child_rng(seed, "bin");
        let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| (0.4 * x + r.random_range(-1.0..1.0)).exp()).collect();
        Dataset::new(y, x).unwrap()
    }

    #[test]
    fn manning_matches_ppml_exactly() {
        let d = binary(1, 300);
        let p = ppml(&d, PPML_MAX_ITER, PPML_TOL).unwrap();
        let m = manning_binary(&d).unwrap();
        let r = compare_discrete(&p, &m, 0.05).unwrap();
        assert!(r.difference.abs() < 1e-10);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn delta_method_near_zero() {
        // paired rows share the noise draw, so the OLS slope is exactly 0.004
        let mut r = child_rng(2, "pairs");
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..1000 {
            let u: f64 = r.random_range(-1.0..1.0);
            let h: f64 = r.random_range(-0.5..0.5);
            x.extend([0.0, 1.0, 0.0, 1.0]);
            y.extend([(u + h).exp(), (0.004 + u - h).exp(), (u - h).exp(), (0.004 + u + h).exp()]);
        }
        let d = Dataset::new(y, x).unwrap();
        let fit = ols_loglog(&d).unwrap();
        assert!((fit.slope() - 0.004).abs() < 1e-12);
        let zero = EstimateReport::from_scores("zero", 0.0, vec![0.0; d.n()], 0.05).unwrap();
        let cont = compare_continuous(&fit, &zero, 0.05).unwrap();
        let disc = compare_discrete(&fit, &zero, 0.05).unwrap();
        let ratio = disc.se_difference / cont.se_difference;
        assert!((ratio - 1.0).abs() < 0.01);
        assert!((ratio - fit.slope().exp()).abs() < 1e-12);
    }

    #[test]
    fn lognormal_arms_reject() {
        // arm 1 log-spread 1, arm 0 log-spread 0.1: OLS exp(beta)-1 misses the level ratio
        let n = 4000;
        let mut r = child_rng(3, "arms");
        let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|x| {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r);
                ((if *x > 0.5 { 1.0 } else { 0.1 }) * z).exp()
            })
            .collect();
        let d = Dataset::new(y, x).unwrap();
        let r = compare_discrete(&ols_loglog(&d).unwrap(), &manning_binary(&d).unwrap(), 0.05).unwrap();
        // truth: exp(1/2 - 0.005) - 1 = 0.64 vs exp(0) - 1 = 0
        assert!(r.significant, "{r:?}");
        assert!(r.estimate_b > 0.4);
    }

    #[test]
    fn batch_examples() {
        let one = summarize_batch(&[result(1.0, 1.1, 0.4)]).unwrap();
        assert_eq!(
            (one.no_change, one.sig_different, one.effect_increase, one.effect_decrease, one.sign_change),
            (1, 0, 0, 0, 0)
        );
        let flip = summarize_batch(&[result(0.5, -0.5, 0.001)]).unwrap();
        assert_eq!((flip.sig_different, flip.sign_change), (1, 1));
        assert!(summarize_batch(&[]).is_err());
    }

    #[test]
    fn planted_batch() {
        let mut rs = Vec::new();
        for i in 0..20 {
            rs.push(result(1.0, 1.0 + 0.01 * i as f64, 0.5));
        }
        for _ in 0..12 {
            rs.push(result(1.0, 2.0, 0.001));
        }
        for _ in 0..10 {
            rs.push(result(-2.0, -0.5, 0.01));
        }
        for _ in 0..8 {
            rs.push(result(1.0, -1.0, 0.0001));
        }
        let s = summarize_batch(&rs).unwrap().with_label("OLS");
        assert_eq!(
            (s.no_change, s.sig_different, s.effect_increase, s.effect_decrease, s.sign_change),
            (20, 30, 12, 10, 8)
        );
        assert_eq!(s.sig_different, s.effect_increase + s.effect_decrease + s.sign_change);
        assert_eq!(s.to_csv(), format!("{BATCH_CSV_HEADER}\nOLS,20,30,12,10,8\n"));
        let json = serde_json::to_string(&rs[0]).unwrap();
        assert_eq!(serde_json::from_str::<ComparisonResult>(&json).unwrap(), rs[0]);
    }
}
