//! Control-function version of the debiased estimator for a triangular
//! system `X = g(Z) + V`, `log Y = beta0 + beta X + rho V + u`.
//!
//! The target is the average semi-elasticity of the average structural
//! function `mu(x) = E_V[m(x, V)]`, `m(x, v) = E[exp(u) | x, v]`. The score is
//!
//! ```text
//! beta + mu'(X)/mu(X) - theta
//!   - omega(X, V) S_X(X) / mu(X) * (exp(u) - m(X, V))
//!   - lambda(Z) (X - g(Z))
//! ```
//!
//! with `omega = f_V / f_{V|X}` and `S_X` the marginal score of `X`.
//! `lambda(z) = E[L | Z = z]`, where `L_j` is the derivative of the average
//! plug-in term `beta + mu'/mu` with respect to the residual `V_j` of
//! observation `j`, computed by central differences.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::baseline::{self, FitResult};
use crate::data::Dataset;
use crate::dream::{make_plan, report_from_terms, CrossFitPlan, DreamConfig, MeanNuisance, MIN_DISTINCT_X, M_FLOOR};
use crate::error::{domain, Error, Result};
use crate::learners::{self, Features, LearnerConfig, RatioModel, RegressorModel, ScoreModel};
use crate::linalg;
use crate::report::{CoefficientSummary, EstimateReport};
use crate::rng::{child_rng, derive_indexed};
use crate::stats;

/// First-stage F-equivalent below which the instrument is flagged weak.
pub const WEAK_F: f64 = 10.0;
/// Finite-difference step for the Riesz targets, relative to `sd(V)`.
pub const RIESZ_STEP: f64 = 1e-3;
/// Observations over which each Riesz target averages the plug-in term.
pub const RIESZ_INNER: usize = 256;
const SUPPORT_BINS: usize = 10;

/// Flexible regression of the treatment on the instruments.
pub struct FirstStageFit {
    pub model: RegressorModel,
    pub v_hat: Vec<f64>,
    /// `1 - mean(v_hat^2) / var(X)`.
    pub r2: f64,
    pub weak: bool,
}

fn instruments(data: &Dataset, rows: &[usize]) -> Features {
    let cols: Vec<Vec<f64>> = data.instruments.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    Features::from_columns(&refs).expect("equal lengths")
}

fn require_iv(data: &Dataset) -> Result<()> {
    data.validate()?;
    if !data.has_instruments() {
        return Err(domain("the control-function estimator needs at least one instrument"));
    }
    if !data.controls.is_empty() {
        return Err(domain("the control-function estimator does not take exogenous controls"));
    }
    Ok(())
}

fn r_squared(x: &[f64], v_hat: &[f64]) -> f64 {
    let var_x = stats::variance(x);
    if var_x > 0.0 {
        1.0 - v_hat.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 / var_x
    } else {
        0.0
    }
}

/// `F = R^2 (n - q - 1) / ((1 - R^2) q)` for `q` instruments, compared with
/// [`WEAK_F`].
fn is_weak(r2: f64, n: usize, q: usize) -> bool {
    let f = r2 * (n as f64 - q as f64 - 1.0) / ((1.0 - r2).max(f64::MIN_POSITIVE) * q as f64);
    !(f >= WEAK_F)
}

pub fn first_stage(data: &Dataset, config: &LearnerConfig) -> Result<FirstStageFit> {
    require_iv(data)?;
    let rows: Vec<usize> = (0..data.n()).collect();
    let z = instruments(data, &rows);
    let model = learners::fit_regression(&z, &data.x, config)?;
    let fitted = model.predict(&z);
    let v_hat: Vec<f64> = data.x.iter().zip(&fitted).map(|(x, g)| x - g).collect();
    let r2 = r_squared(&data.x, &v_hat);
    let weak = is_weak(r2, data.n(), data.instruments.len());
    Ok(FirstStageFit { model, v_hat, r2, weak })
}

/// `mu(x) = mean_j m(x, v_j)` and its derivative in `x`.
pub fn asf(m: &dyn MeanNuisance, x: f64, v_sample: &[f64]) -> (f64, f64) {
    let xs = vec![x; v_sample.len()];
    let v = Features { n: v_sample.len(), d: 1, data: v_sample.to_vec() };
    let (vals, ders) = m.eval(&xs, &v);
    (stats::mean(&vals), stats::mean(&ders))
}

fn asf_many(m: &dyn MeanNuisance, xs: &[f64], v_sample: &[f64]) -> Vec<(f64, f64)> {
    xs.par_iter().map(|&x| asf(m, x, v_sample)).collect()
}

/// Riesz targets `L_j`: the derivative with respect to `v_j` of
/// `n * mean_i (mu'(x_i) / mu(x_i))`, where `mu` averages `m` over `v`.
/// `x_inner` is the sample of evaluation points `x_i`.
pub fn riesz_targets(m: &dyn MeanNuisance, x_inner: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(domain(format!("finite-difference step must be positive, got {h}")));
    }
    let mus = asf_many(m, x_inner, v);
    let k = x_inner.len();
    let out: Vec<f64> = v
        .par_iter()
        .map(|&vj| {
            let mut xs = Vec::with_capacity(2 * k);
            xs.extend_from_slice(x_inner);
            xs.extend_from_slice(x_inner);
            let mut vs = vec![vj + h; k];
            vs.extend(std::iter::repeat_n(vj - h, k));
            let (val, der) = m.eval(&xs, &Features { n: 2 * k, d: 1, data: vs });
            let mut acc = 0.0;
            for (i, &(mu, dmu)) in mus.iter().enumerate() {
                let dv_der = (der[i] - der[k + i]) / (2.0 * h);
                let dv_val = (val[i] - val[k + i]) / (2.0 * h);
                // the plug-in floors mu, so below the floor only mu' moves
                if mu >= M_FLOOR {
                    acc += dv_der / mu - dmu * dv_val / (mu * mu);
                } else {
                    acc += dv_der / M_FLOOR;
                }
            }
            acc / k as f64
        })
        .collect();
    if let Some(j) = out.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteMoment(format!("Riesz target {j} is not finite")));
    }
    Ok(out)
}

/// Regresses the Riesz targets on the instruments.
pub fn riesz_lambda(z: &Features, targets: &[f64], config: &LearnerConfig) -> Result<RegressorModel> {
    learners::fit_regression(z, targets, config)
}

/// Nuisances of one fold, all trained on `train_rows`.
pub struct IvFoldNuisance {
    pub fold: usize,
    pub g: RegressorModel,
    /// `(beta0, beta, rho)`
    pub coef: [f64; 3],
    pub m: RegressorModel,
    pub omega: RatioModel,
    pub score_x: ScoreModel,
    pub lambda: RegressorModel,
    pub train_rows: Vec<usize>,
    pub validation: BTreeMap<String, f64>,
}

pub struct IVNuisanceSet {
    pub plan: CrossFitPlan,
    pub folds: Vec<IvFoldNuisance>,
}

impl IVNuisanceSet {
    pub fn check_hygiene(&self) -> Result<()> {
        for f in &self.folds {
            if let Some(&i) = f.train_rows.iter().find(|&&i| self.plan.assignment[i] == f.fold) {
                return Err(Error::InvalidData(format!("row {i} trains the nuisances of its own fold {}", f.fold)));
            }
        }
        Ok(())
    }

    /// `X - g(Z)` with each row's first stage trained out of fold.
    pub fn residuals(&self, data: &Dataset) -> Vec<f64> {
        let mut v = vec![0.0; data.n()];
        for f in &self.folds {
            let rows = self.plan.fold_rows(f.fold);
            let g = f.g.predict(&instruments(data, &rows));
            for (j, &i) in rows.iter().enumerate() {
                v[i] = data.x[i] - g[j];
            }
        }
        v
    }
}

pub fn fit_iv_nuisances(data: &Dataset, plan: &CrossFitPlan, config: &DreamConfig) -> Result<IVNuisanceSet> {
    require_iv(data)?;
    if plan.n != data.n() {
        return Err(Error::Mismatch(format!("plan covers {} rows, data has {}", plan.n, data.n())));
    }
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|k| fit_iv_fold(data, plan, config, k).map_err(|e| e.in_fold(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(IVNuisanceSet { plan: plan.clone(), folds })
}

fn fit_iv_fold(data: &Dataset, plan: &CrossFitPlan, config: &DreamConfig, k: usize) -> Result<IvFoldNuisance> {
    let rows = plan.train_rows(k);
    let z = instruments(data, &rows);
    let x: Vec<f64> = rows.iter().map(|&i| data.x[i]).collect();
    let g = learners::fit_regression(&z, &x, &config.learner_for("iv_g", k))?;
    let gz = g.predict(&z);
    let v: Vec<f64> = x.iter().zip(&gz).map(|(x, g)| x - g).collect();

    let ly: Vec<f64> = rows.iter().map(|&i| data.y[i].ln()).collect();
    let cols = vec![vec![1.0; rows.len()], x.clone(), v.clone()];
    let names = ["const", "x", "v_hat"].map(String::from);
    let c = linalg::least_squares(&cols, &names, &ly)?;
    let coef = [c[0], c[1], c[2]];
    let target: Vec<f64> = (0..rows.len())
        .map(|j| (ly[j] - coef[0] - coef[1] * x[j] - coef[2] * v[j]).exp())
        .collect();
    let xv = Features::from_columns(&[&x, &v])?;
    let m = learners::fit_positive_mean(&xv, &target, &config.learner_for("iv_m", k))?;
    let xf = Features::from_columns(&[&x])?;
    let omega = learners::fit_density_ratio(&v, &xf, &config.learner_for("iv_omega", k))?;
    let score_x = learners::fit_marginal_score(&x, &config.learner_for("iv_score", k))?;

    let mut inner: Vec<usize> = (0..rows.len()).collect();
    inner.shuffle(&mut child_rng(derive_indexed(config.seed, "iv_inner", k as u64), "shuffle"));
    let x_inner: Vec<f64> = inner.iter().take(RIESZ_INNER).map(|&j| x[j]).collect();
    let h = RIESZ_STEP * stats::std_dev(&v).max(f64::MIN_POSITIVE);
    let targets = riesz_targets(&m, &x_inner, &v, h)?;
    let lambda = riesz_lambda(&z, &targets, &config.learner_for("iv_lambda", k))?;

    let mut validation = BTreeMap::new();
    validation.insert("g".to_string(), g.validation_mse);
    validation.insert("m".to_string(), m.validation_mse);
    validation.insert("omega".to_string(), omega.validation_loss);
    validation.insert("score_x".to_string(), score_x.validation_loss);
    validation.insert("lambda".to_string(), lambda.validation_mse);
    Ok(IvFoldNuisance {
        fold: k,
        g,
        coef,
        m,
        omega,
        score_x,
        lambda,
        train_rows: rows,
        validation,
    })
}

/// OLS of `log y` on `(1, x, v_hat)` with robust standard errors.
pub fn control_function(data: &Dataset, v_hat: &[f64]) -> Result<FitResult> {
    let mut aug = Dataset::with_columns(data.y.clone(), data.x.clone(), vec![v_hat.to_vec()], Vec::new(), None)?;
    aug.control_names = vec!["v_hat".to_string()];
    baseline::ols_loglog(&aug)
}

/// Per-observation ingredients of the score.
#[derive(Debug, Clone, PartialEq)]
pub struct IvComponents {
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub dmu: Vec<f64>,
    pub omega: Vec<f64>,
    pub score_x: Vec<f64>,
    pub exp_u: Vec<f64>,
    pub m: Vec<f64>,
    pub lambda: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub clamp_hits: usize,
    pub omega_clipped: usize,
}

impl IvComponents {
    pub fn plugin(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|i| self.beta[i] + self.dmu[i] / self.mu[i]).collect()
    }

    pub fn terms(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|i| {
                self.beta[i] + self.dmu[i] / self.mu[i]
                    - self.omega[i] * self.score_x[i] / self.mu[i] * (self.exp_u[i] - self.m[i])
                    - self.lambda[i] * self.v_hat[i]
            })
            .collect()
    }
}

fn floor(v: f64, hits: &mut usize) -> f64 {
    if v.is_finite() && v >= M_FLOOR {
        v
    } else {
        *hits += 1;
        M_FLOOR
    }
}

impl IVNuisanceSet {
    pub fn components(&self, data: &Dataset) -> IvComponents {
        let n = data.n();
        let v_all = self.residuals(data);
        let mut c = IvComponents {
            beta: vec![0.0; n],
            mu: vec![0.0; n],
            dmu: vec![0.0; n],
            omega: vec![0.0; n],
            score_x: vec![0.0; n],
            exp_u: vec![0.0; n],
            m: vec![0.0; n],
            lambda: vec![0.0; n],
            v_hat: v_all.clone(),
            g_hat: data.x.iter().zip(&v_all).map(|(x, v)| x - v).collect(),
            clamp_hits: 0,
            omega_clipped: 0,
        };
        for f in &self.folds {
            let rows = self.plan.fold_rows(f.fold);
            let x: Vec<f64> = rows.iter().map(|&i| data.x[i]).collect();
            let v: Vec<f64> = rows.iter().map(|&i| v_all[i]).collect();
            let z = instruments(data, &rows);
            let mus = asf_many(&f.m, &x, &v_all);
            let m = f.m.predict(&Features::from_columns(&[&x, &v]).expect("equal lengths"));
            let xf = Features::from_columns(&[&x]).expect("one column");
            let (omega, clipped) = f.omega.ratio(&xf, &v);
            c.omega_clipped += clipped;
            let s = f.score_x.score(&x, &Features::empty(x.len()));
            let lambda = f.lambda.predict(&z);
            for (j, &i) in rows.iter().enumerate() {
                let u = data.y[i].ln() - f.coef[0] - f.coef[1] * x[j] - f.coef[2] * v[j];
                c.beta[i] = f.coef[1];
                c.mu[i] = floor(mus[j].0, &mut c.clamp_hits);
                c.dmu[i] = mus[j].1;
                c.m[i] = floor(m[j], &mut c.clamp_hits);
                c.exp_u[i] = u.exp();
                c.omega[i] = omega[j];
                c.score_x[i] = s[j];
                c.lambda[i] = lambda[j];
            }
        }
        c
    }
}

/// Range of `g_hat` within each of `bins` quantile bins of `v_hat`.
fn support_by_v_bin(v_hat: &[f64], g_hat: &[f64], bins: usize) -> Vec<[f64; 2]> {
    let mut idx: Vec<usize> = (0..v_hat.len()).collect();
    idx.sort_by(|&a, &b| v_hat[a].total_cmp(&v_hat[b]));
    let n = idx.len();
    (0..bins)
        .map(|b| {
            let part = &idx[b * n / bins..(b + 1) * n / bins];
            part.iter().fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], &i| {
                [lo.min(g_hat[i]), hi.max(g_hat[i])]
            })
        })
        .collect()
}

/// Cross-fitted control-function estimate of the average semi-elasticity of
/// the average structural function.
pub fn estimate_iv(data: &Dataset, k: usize, config: &DreamConfig) -> Result<EstimateReport> {
    require_iv(data)?;
    config.learner.validate()?;
    let plan = make_plan(data.n(), k, config.seed)?;
    let set = fit_iv_nuisances(data, &plan, config)?;
    set.check_hygiene()?;
    let comps = set.components(data);
    let mut report = report_from_terms("dream_iv", &comps.terms(), config.level)?;
    report.k = Some(k);
    report.seed = Some(config.seed);

    let n = data.n() as f64;
    let r2 = r_squared(&data.x, &comps.v_hat);
    let cf = control_function(data, &comps.v_hat)?;
    let d = &mut report.diagnostics;
    d.fold_sizes = Some(plan.fold_sizes());
    d.clamp_hits = Some(comps.clamp_hits);
    d.clamp_rate = Some(comps.clamp_hits as f64 / (2.0 * n));
    for f in &set.folds {
        for (name, v) in &f.validation {
            d.validation_losses.entry(name.clone()).or_default().push(*v);
        }
    }
    d.fold_coefficients = Some(set.folds.iter().map(|f| f.coef.to_vec()).collect());
    d.config_hash = Some(config.hash());
    d.dataset_hash = Some(data.content_hash());
    d.first_stage_r2 = Some(r2);
    d.omega_clip_rate = Some(comps.omega_clipped as f64 / n);
    d.lambda_norm = Some((comps.lambda.iter().map(|l| l * l).sum::<f64>() / n).sqrt());
    d.control_function = Some(CoefficientSummary {
        names: cf.names.clone(),
        coef: cf.coefficients.clone(),
        se: cf.se(),
    });
    d.support_by_v_bin = Some(support_by_v_bin(&comps.v_hat, &comps.g_hat, SUPPORT_BINS));

    if is_weak(r2, data.n(), data.instruments.len()) {
        report.warnings.push(format!("weak first stage: cross-fitted R^2 = {r2:.4}"));
    }
    if d.clamp_rate.unwrap_or(0.0) > crate::dream::CLAMP_WARN_RATE {
        report.warnings.push("more than 10% of mu/m predictions hit the positivity floor".into());
    }
    let distinct = data.distinct_x();
    if distinct < MIN_DISTINCT_X {
        report.warnings.push(format!(
            "treatment has only {distinct} distinct values; the marginal density score is ill-posed"
        ));
    }
    Ok(report)
}
