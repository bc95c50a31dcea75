//! Reference estimators: log-linear OLS, PPML, Manning's binary smearing
//! correction and two-stage least squares, all with HC1 covariance and
//! per-observation influence values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::report::EstimateReport;
use crate::stats::{self, pairwise_sum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    OlsLoglog,
    Ppml,
    ManningBinary,
    Tsls,
}

/// Output of a linear or exponential baseline fit. Coefficient order is
/// intercept, treatment, then controls.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: EstimatorTag,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov_robust: DMatrix<f64>,
    /// `n x p` influence values; `coef - truth ~ mean of rows`.
    pub influence: DMatrix<f64>,
    /// `log y - fitted` (OLS, 2SLS) or `y - exp(fitted)` (PPML).
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub first_stage_f: Option<f64>,
    pub weak_instrument: bool,
}

/// JSON shape of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub estimator: EstimatorTag,
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    #[serde(rename = "first_stage_F", default, skip_serializing_if = "Option::is_none")]
    pub first_stage_f: Option<f64>,
    #[serde(default)]
    pub weak_instrument: bool,
    /// Influence values of the treatment coefficient.
    #[serde(default)]
    pub treatment_influence: Vec<f64>,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.influence.nrows()
    }

    pub fn se(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|j| self.vcov_robust[(j, j)].max(0.0).sqrt())
            .collect()
    }

    /// Coefficient on the treatment.
    pub fn slope(&self) -> f64 {
        self.coefficients[1]
    }

    pub fn slope_se(&self) -> f64 {
        self.se()[1]
    }

    pub fn treatment_influence(&self) -> Vec<f64> {
        self.influence.column(1).iter().copied().collect()
    }

    pub fn summary(&self) -> FitSummary {
        let p = self.coefficients.len();
        FitSummary {
            estimator: self.estimator,
            names: self.names.clone(),
            coef: self.coefficients.clone(),
            se: self.se(),
            vcov: (0..p).map(|i| (0..p).map(|j| self.vcov_robust[(i, j)]).collect()).collect(),
            n: self.n(),
            converged: self.converged,
            iterations: self.iterations,
            first_stage_f: self.first_stage_f,
            weak_instrument: self.weak_instrument,
            treatment_influence: self.treatment_influence(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// `(1, x, controls...)` with names.
fn design(data: &Dataset) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut cols = vec![vec![1.0; data.n()], data.x.clone()];
    cols.extend(data.controls.iter().cloned());
    let mut names = vec!["const".to_string(), "x".to_string()];
    names.extend(data.control_names.iter().cloned());
    (cols, names)
}

/// Influence rows `A^{-1} w_i r_i` for a bread matrix `A` (already divided by n).
fn influence_rows(cols: &[Vec<f64>], resid: &[f64], bread_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = resid.len();
    let p = cols.len();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let w = DVector::from_iterator(p, cols.iter().map(|c| c[i] * resid[i]));
        let row = bread_inv * w;
        for j in 0..p {
            out[(i, j)] = row[j];
        }
    }
    out
}

/// Least squares of `log y` on `(1, x, controls)`.
pub fn ols_loglog(data: &Dataset) -> Result<FitResult> {
    data.validate()?;
    let (cols, names) = design(data);
    let qr = linalg::qr(&cols, &names)?;
    let ly = data.log_y();
    let coef = qr.solve(&ly);
    let fitted = linalg::predict(&cols, &coef);
    let resid: Vec<f64> = ly.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let bread_inv = qr.gram_inverse() * data.n() as f64;
    let influence = influence_rows(&cols, &resid, &bread_inv);
    Ok(FitResult {
        estimator: EstimatorTag::OlsLoglog,
        names,
        coefficients: coef,
        vcov_robust: linalg::hc1_from_influence(&influence),
        influence,
        residuals: resid,
        converged: true,
        iterations: 1,
        first_stage_f: None,
        weak_instrument: false,
    })
}

/// Default PPML settings.
pub const PPML_MAX_ITER: usize = 100;
pub const PPML_TOL: f64 = 1e-8;
const SEPARATION_STEP: f64 = 1e3;

struct PoissonState {
    mu: Vec<f64>,
    score: Vec<f64>,
    loglik: f64,
}

fn poisson_state(cols: &[Vec<f64>], y: &[f64], gamma: &[f64]) -> PoissonState {
    let eta = linalg::predict(cols, gamma);
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let r: Vec<f64> = y.iter().zip(&mu).map(|(y, m)| y - m).collect();
    let score = cols.iter().map(|c| pairwise_sum(&c.iter().zip(&r).map(|(a, b)| a * b).collect::<Vec<_>>())).collect();
    let ll: Vec<f64> = y.iter().zip(&eta).zip(&mu).map(|((y, e), m)| y * e - m).collect();
    PoissonState {
        mu,
        score,
        loglik: pairwise_sum(&ll),
    }
}

fn poisson_hessian(cols: &[Vec<f64>], mu: &[f64]) -> DMatrix<f64> {
    let p = cols.len();
    DMatrix::from_fn(p, p, |a, b| {
        let prod: Vec<f64> = cols[a].iter().zip(&cols[b]).zip(mu).map(|((x, z), m)| x * z * m).collect();
        pairwise_sum(&prod)
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Poisson pseudo-maximum likelihood of `y` on `exp(1, x, controls)` by
/// Newton's method with step halving. Converged means
/// `max |score| / n < tol`.
pub fn ppml(data: &Dataset, max_iter: usize, tol: f64) -> Result<FitResult> {
    data.validate()?;
    let (cols, names) = design(data);
    linalg::qr(&cols, &names)?;
    let n = data.n() as f64;
    let y = &data.y;
    let p = cols.len();
    let mut gamma = vec![0.0; p];
    gamma[0] = stats::mean(y).ln();
    let mut state = poisson_state(&cols, y, &gamma);
    let mut iterations = 0;
    let newton = |state: &PoissonState| -> Result<Vec<f64>> {
        let h = poisson_hessian(&cols, &state.mu);
        let chol = h.cholesky().ok_or_else(|| Error::SingularDesign {
            column: names[p - 1].clone(),
        })?;
        Ok(chol.solve(&DVector::from_column_slice(&state.score)).as_slice().to_vec())
    };
    let mut converged = max_abs(&state.score) / n < tol;
    while !converged {
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                max_score: max_abs(&state.score) / n,
                last_iterate: gamma,
            });
        }
        iterations += 1;
        let step = newton(&state)?;
        if let Some(j) = (0..p).find(|&j| step[j].abs() > SEPARATION_STEP || !step[j].is_finite()) {
            return Err(Error::Separation {
                column: names[j].clone(),
            });
        }
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = gamma.iter().zip(&step).map(|(g, s)| g + t * s).collect();
            let next = poisson_state(&cols, y, &cand);
            if next.loglik.is_finite() && next.loglik >= state.loglik - 1e-12 * state.loglik.abs() {
                gamma = cand;
                state = next;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::NotConverged {
                    iterations,
                    max_score: max_abs(&state.score) / n,
                    last_iterate: gamma,
                });
            }
        }
        converged = max_abs(&state.score) / n < tol;
    }
    // One polishing step: Newton is quadratically convergent here, so this
    // takes the first-order conditions to rounding level.
    let step = newton(&state)?;
    let cand: Vec<f64> = gamma.iter().zip(&step).map(|(g, s)| g + s).collect();
    let polished = poisson_state(&cols, y, &cand);
    if max_abs(&polished.score) <= max_abs(&state.score) {
        gamma = cand;
        state = polished;
    }

    let resid: Vec<f64> = y.iter().zip(&state.mu).map(|(y, m)| y - m).collect();
    let bread = poisson_hessian(&cols, &state.mu) / n;
    let bread_inv = bread.try_inverse().ok_or_else(|| Error::SingularDesign {
        column: names[p - 1].clone(),
    })?;
    let influence = influence_rows(&cols, &resid, &bread_inv);
    Ok(FitResult {
        estimator: EstimatorTag::Ppml,
        names,
        coefficients: gamma,
        vcov_robust: linalg::hc1_from_influence(&influence),
        influence,
        residuals: resid,
        converged: true,
        iterations,
        first_stage_f: None,
        weak_instrument: false,
    })
}

fn arms(data: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut a0 = Vec::new();
    let mut a1 = Vec::new();
    for (i, &x) in data.x.iter().enumerate() {
        if x == 0.0 {
            a0.push(i);
        } else if x == 1.0 {
            a1.push(i);
        } else {
            return Err(Error::InvalidData(format!("treatment is not binary (row {i} has x = {x})")));
        }
    }
    if a0.is_empty() {
        return Err(Error::DegenerateArm { arm: 0 });
    }
    if a1.is_empty() {
        return Err(Error::DegenerateArm { arm: 1 });
    }
    Ok((a0, a1))
}

/// Arithmetic percentage change `ybar_1 / ybar_0 - 1` for a binary
/// treatment, i.e. `exp(beta_1)` times the ratio of arm-wise smearing
/// factors, minus one. The standard error uses the delta method on the two
/// arm means.
pub fn manning_binary(data: &Dataset) -> Result<EstimateReport> {
    data.validate()?;
    let (a0, a1) = arms(data)?;
    let n = data.n() as f64;
    let mean_of = |idx: &[usize]| pairwise_sum(&idx.iter().map(|&i| data.y[i]).collect::<Vec<_>>()) / idx.len() as f64;
    let (y0, y1) = (mean_of(&a0), mean_of(&a1));
    let (p0, p1) = (a0.len() as f64 / n, a1.len() as f64 / n);
    let theta = y1 / y0 - 1.0;
    let scores: Vec<f64> = data
        .y
        .iter()
        .zip(&data.x)
        .map(|(&y, &x)| {
            if x == 1.0 {
                (y - y1) / p1 / y0
            } else {
                -y1 * (y - y0) / p0 / (y0 * y0)
            }
        })
        .collect();
    let mut r = EstimateReport::from_scores("manning_binary", theta, scores, 0.05)?;
    r.diagnostics.dataset_hash = Some(data.content_hash());
    Ok(r)
}

/// `|gamma_1 - (beta_1 + log mean(e^u | x=1) - log mean(e^u | x=0))|` for the
/// treatment-only design, with `u` the OLS residuals of `log y` on `(1, x)`.
pub fn binary_mapping_check(data: &Dataset) -> Result<f64> {
    data.validate()?;
    let (a0, a1) = arms(data)?;
    let bare = Dataset::new(data.y.clone(), data.x.clone())?;
    let ols = ols_loglog(&bare)?;
    let pp = ppml(&bare, PPML_MAX_ITER, PPML_TOL)?;
    let smear = |idx: &[usize]| {
        let e: Vec<f64> = idx.iter().map(|&i| ols.residuals[i].exp()).collect();
        (pairwise_sum(&e) / idx.len() as f64).ln()
    };
    Ok((pp.slope() - (ols.slope() + smear(&a1) - smear(&a0))).abs())
}

/// Threshold below which the first-stage F statistic raises the weak flag.
pub const WEAK_F: f64 = 1.0;

/// Two-stage least squares of `log y` on `(1, x, controls)` with excluded
/// instruments `iv*`. The first-stage F tests the excluded instruments.
pub fn tsls(data: &Dataset) -> Result<FitResult> {
    data.validate()?;
    if !data.has_instruments() {
        return Err(Error::InvalidData("2SLS needs at least one instrument column".into()));
    }
    let n = data.n();
    let (cols, names) = design(data);
    let mut inst = vec![vec![1.0; n]];
    inst.extend(data.controls.iter().cloned());
    let mut inst_names = vec!["const".to_string()];
    inst_names.extend(data.control_names.iter().cloned());
    let restricted_k = inst.len();
    inst.extend(data.instruments.iter().cloned());
    inst_names.extend(data.instrument_names.iter().cloned());

    let first = linalg::qr(&inst, &inst_names)?;
    let pi = first.solve(&data.x);
    let x_hat = linalg::predict(&inst, &pi);
    let rss = |fit: &[f64]| data.x.iter().zip(fit).map(|(x, f)| (x - f).powi(2)).sum::<f64>();
    let rss_u = rss(&x_hat);
    let restricted = linalg::least_squares(&inst[..restricted_k], &inst_names[..restricted_k], &data.x)?;
    let rss_r = rss(&linalg::predict(&inst[..restricted_k], &restricted));
    let q = (inst.len() - restricted_k) as f64;
    let dof = n as f64 - inst.len() as f64;
    let f_stat = if rss_u > 0.0 && dof > 0.0 {
        ((rss_r - rss_u) / q) / (rss_u / dof)
    } else {
        f64::INFINITY
    };

    let mut second = cols.clone();
    second[1] = x_hat;
    let qr2 = linalg::qr(&second, &names)?;
    let ly = data.log_y();
    let coef = qr2.solve(&ly);
    let resid: Vec<f64> = ly
        .iter()
        .zip(linalg::predict(&cols, &coef))
        .map(|(y, f)| y - f)
        .collect();
    let bread_inv = qr2.gram_inverse() * n as f64;
    let influence = influence_rows(&second, &resid, &bread_inv);
    Ok(FitResult {
        estimator: EstimatorTag::Tsls,
        names,
        coefficients: coef,
        vcov_robust: linalg::hc1_from_influence(&influence),
        influence,
        residuals: resid,
        converged: true,
        iterations: 1,
        first_stage_f: Some(f_stat),
        weak_instrument: f_stat < WEAK_F,
    })
}
