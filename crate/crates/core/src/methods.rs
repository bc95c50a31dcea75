//! Uniform dispatch over every estimator, each returning an
//! [`EstimateReport`] whose `scores` are per-observation influence values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{self, FitResult};
use crate::data::Dataset;
use crate::dream::{self, DreamConfig};
use crate::dream_iv;
use crate::error::{domain, Error, Result};
use crate::report::{CoefficientSummary, EstimateReport};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ols")]
    Ols,
    #[serde(rename = "ppml")]
    Ppml,
    #[serde(rename = "manning")]
    Manning,
    #[serde(rename = "2sls")]
    Tsls,
    #[serde(rename = "dream")]
    Dream,
    #[serde(rename = "dream-iv")]
    DreamIv,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ols,
        Method::Ppml,
        Method::Manning,
        Method::Tsls,
        Method::Dream,
        Method::DreamIv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Ppml => "ppml",
            Method::Manning => "manning",
            Method::Tsls => "2sls",
            Method::Dream => "dream",
            Method::DreamIv => "dream-iv",
        }
    }

    /// True for methods that train nuisance learners.
    pub fn is_cross_fitted(self) -> bool {
        matches!(self, Method::Dream | Method::DreamIv)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| domain(format!("unknown method `{s}` (expected one of ols, ppml, manning, 2sls, dream, dream-iv)")))
    }
}

/// Report for the treatment coefficient of a parametric fit. The interval
/// uses the robust standard error.
pub fn fit_report(fit: &FitResult, method: &str, level: f64) -> Result<EstimateReport> {
    let mut r = EstimateReport::from_scores(method, fit.slope(), fit.treatment_influence(), level)?;
    r.se = fit.slope_se();
    let z = stats::z_critical(level);
    r.ci = [r.theta - z * r.se, r.theta + z * r.se];
    r.diagnostics.coefficients = Some(CoefficientSummary {
        names: fit.names.clone(),
        coef: fit.coefficients.clone(),
        se: fit.se(),
    });
    r.diagnostics.iterations = Some(fit.iterations);
    r.diagnostics.first_stage_f = fit.first_stage_f;
    if fit.weak_instrument {
        r.warnings.push(format!(
            "weak instrument: first-stage F = {:.3}",
            fit.first_stage_f.unwrap_or(f64::NAN)
        ));
    }
    Ok(r)
}

/// Runs `method` on `data`. `k` and `config` only matter for the
/// cross-fitted methods.
pub fn run_method(method: Method, data: &Dataset, k: usize, config: &DreamConfig) -> Result<EstimateReport> {
    let mut r = match method {
        Method::Ols => fit_report(&baseline::ols_loglog(data)?, "ols", config.level)?,
        Method::Ppml => fit_report(
            &baseline::ppml(data, baseline::PPML_MAX_ITER, baseline::PPML_TOL)?,
            "ppml",
            config.level,
        )?,
        Method::Tsls => fit_report(&baseline::tsls(data)?, "2sls", config.level)?,
        Method::Manning => {
            let mut r = baseline::manning_binary(data)?;
            if config.level != r.level {
                r = EstimateReport::from_scores("manning_binary", r.theta, r.scores, config.level)?;
            }
            r
        }
        Method::Dream => return dream::estimate(data, k, config),
        Method::DreamIv => return dream_iv::estimate_iv(data, k, config),
    };
    r.diagnostics.dataset_hash = Some(data.content_hash());
    Ok(r)
}
