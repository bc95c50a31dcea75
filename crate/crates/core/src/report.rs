//! Point estimate, inference and diagnostics for a scalar target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::stats::{self, pairwise_sum};

/// Relative slack in [`EstimateReport::covers`].
pub const COVER_TOL: f64 = 1e-10;

/// Run diagnostics. Fields that do not apply to a method are omitted from
/// the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_sizes: Option<Vec<usize>>,
    /// Number of evaluations where the conditional-mean prediction hit the
    /// positivity floor, and the corresponding rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_hits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_rate: Option<f64>,
    /// Best validation loss per learner, one entry per fold.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub validation_losses: BTreeMap<String, Vec<f64>>,
    /// Per-fold linear coefficients `(intercept, slope, controls...)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_coefficients: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_clip_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_norm: Option<f64>,
    /// Full coefficient table of a parametric baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Full-sample control-function regression on cross-fitted residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_function: Option<CoefficientSummary>,
    /// Empirical range of the first-stage fit within residual-quantile bins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_by_v_bin: Option<Vec<[f64; 2]>>,
}

/// Coefficients with robust standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
}

/// Result of a scalar estimator. `scores` holds the centred per-observation
/// influence values, so `se = sqrt(mean(scores^2) / n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub theta: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub n: usize,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
    #[serde(default)]
    pub scores: Vec<f64>,
}

impl EstimateReport {
    /// Builds the report from a point estimate and centred scores at the
    /// given significance level (e.g. 0.05 for a 95% interval).
    pub fn from_scores(method: &str, theta: f64, scores: Vec<f64>, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(domain(format!("level must lie in (0,1), got {level}")));
        }
        let n = scores.len();
        if n == 0 {
            return Err(domain("no scores"));
        }
        let sq: Vec<f64> = scores.iter().map(|s| s * s).collect();
        let se = (pairwise_sum(&sq) / n as f64 / n as f64).sqrt();
        let z = stats::z_critical(level);
        Ok(EstimateReport {
            method: method.to_string(),
            theta,
            se,
            ci: [theta - z * se, theta + z * se],
            level,
            n,
            k: None,
            seed: None,
            diagnostics: Diagnostics::default(),
            warnings: Vec::new(),
            notices: Vec::new(),
            scores,
        })
    }

    /// Interval membership, allowing for rounding so that an exact fit with
    /// a zero-width interval still covers its target.
    pub fn covers(&self, value: f64) -> bool {
        let tol = COVER_TOL * value.abs().max(1.0);
        self.ci[0] - tol <= value && value <= self.ci[1] + tol
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-observation scores as a one-column CSV.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("score\n");
        for s in &self.scores {
            out.push_str(&crate::data::fmt_f64(*s));
            out.push('\n');
        }
        out
    }
}
