//! Cross-fitted debiased estimation of the average arithmetic
//! (semi-)elasticity.
//!
//! For an observation `(y, x, z)` with out-of-fold nuisances the score is
//!
//! ```text
//! phi = beta + m'(x,z)/m(x,z) - theta + alpha(x,z) * (exp(u) - m(x,z)),
//! alpha = -s(x|z) / m(x,z),   u = log y - beta0 - beta x - gamma'z,
//! ```
//!
//! where `m(x,z) = E[exp(u) | x, z]` and `s` is the conditional density
//! score of `x` given `z`. The score is affine in `theta` with slope `-1`,
//! so the estimate is the sample mean of the remaining terms.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline;
use crate::data::Dataset;
use crate::error::{domain, Error, Result};
use crate::learners::{self, Features, LearnerConfig, RegressorModel, ScoreModel};
use crate::linalg;
use crate::report::EstimateReport;
use crate::rng::{child_rng, derive_indexed};
use crate::stats::{self, pairwise_sum};

/// Lower bound applied to predictions of `m`.
pub const M_FLOOR: f64 = 1e-3;
/// Clamp rate above which a warning is attached to the report.
pub const CLAMP_WARN_RATE: f64 = 0.10;
/// Below this many distinct treatment values the density score is ill-posed.
pub const MIN_DISTINCT_X: usize = 10;

/// Random balanced partition of `0..n` into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub n: usize,
    pub k: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

pub fn make_plan(n: usize, k: usize, seed: u64) -> Result<CrossFitPlan> {
    if k < 2 {
        return Err(domain(format!("need at least 2 folds, got {k}")));
    }
    if n < 2 * k {
        return Err(domain(format!("n = {n} is too small for {k} folds (need n >= {})", 2 * k)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut child_rng(seed, "cross_fit_plan"));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(CrossFitPlan { n, k, assignment, seed })
}

impl CrossFitPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

/// Conditional mean `m(x, z)` together with `dm/dx`.
pub trait MeanNuisance: Send + Sync {
    fn eval(&self, x: &[f64], z: &Features) -> (Vec<f64>, Vec<f64>);
}

/// Conditional density score `d/dx log f(x | z)`.
pub trait ScoreNuisance: Send + Sync {
    fn eval(&self, x: &[f64], z: &Features) -> Vec<f64>;
}

/// `(x, z...)` with the treatment first.
pub(crate) fn treatment_first(x: &[f64], z: &Features) -> Features {
    let mut data = Vec::with_capacity(x.len() * (z.d + 1));
    for (i, xi) in x.iter().enumerate() {
        data.push(*xi);
        data.extend_from_slice(z.row(i));
    }
    Features { n: x.len(), d: z.d + 1, data }
}

impl MeanNuisance for RegressorModel {
    fn eval(&self, x: &[f64], z: &Features) -> (Vec<f64>, Vec<f64>) {
        self.predict_with_derivative(&treatment_first(x, z), 0)
    }
}

impl ScoreNuisance for ScoreModel {
    fn eval(&self, x: &[f64], z: &Features) -> Vec<f64> {
        self.score(x, z)
    }
}

/// Known mean function `(x, z) -> (m, dm/dx)`, for oracle experiments.
pub struct ExactMean<F>(pub F);

impl<F: Fn(f64, &[f64]) -> (f64, f64) + Send + Sync> MeanNuisance for ExactMean<F> {
    fn eval(&self, x: &[f64], z: &Features) -> (Vec<f64>, Vec<f64>) {
        x.iter().enumerate().map(|(i, xi)| (self.0)(*xi, z.row(i))).unzip()
    }
}

/// Known score function `(x, z) -> s`, for oracle experiments.
pub struct ExactScore<F>(pub F);

impl<F: Fn(f64, &[f64]) -> f64 + Send + Sync> ScoreNuisance for ExactScore<F> {
    fn eval(&self, x: &[f64], z: &Features) -> Vec<f64> {
        x.iter().enumerate().map(|(i, xi)| (self.0)(*xi, z.row(i))).collect()
    }
}

/// Nuisances for one fold, trained on `train_rows` only.
pub struct FoldNuisance {
    pub fold: usize,
    /// `(intercept, slope, controls...)`
    pub beta: Vec<f64>,
    pub m: Box<dyn MeanNuisance>,
    pub score: Box<dyn ScoreNuisance>,
    pub train_rows: Vec<usize>,
    pub validation: BTreeMap<String, f64>,
}

pub struct NuisanceSet {
    pub plan: CrossFitPlan,
    pub folds: Vec<FoldNuisance>,
}

/// Estimator settings other than the number of folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DreamConfig {
    /// Two-sided significance level of the reported interval.
    pub level: f64,
    pub seed: u64,
    pub learner: LearnerConfig,
}

impl Default for DreamConfig {
    fn default() -> Self {
        DreamConfig {
            level: 0.05,
            seed: 0,
            learner: LearnerConfig::default(),
        }
    }
}

impl DreamConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    pub(crate) fn learner_for(&self, tag: &str, fold: usize) -> LearnerConfig {
        self.learner.clone().with_seed(derive_indexed(self.seed, tag, fold as u64))
    }
}

pub(crate) fn controls_of(data: &Dataset, rows: &[usize]) -> Features {
    let cols: Vec<Vec<f64>> = data.controls.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let mut f = Features::from_columns(&refs).expect("equal lengths");
    f.n = rows.len();
    f
}

fn linear_design(data: &Dataset, rows: &[usize]) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut cols = vec![vec![1.0; rows.len()], rows.iter().map(|&i| data.x[i]).collect()];
    cols.extend(data.controls.iter().map(|c| rows.iter().map(|&i| c[i]).collect()));
    let mut names = vec!["const".to_string(), "x".to_string()];
    names.extend(data.control_names.iter().cloned());
    (cols, names)
}

/// `log y - beta'(1, x, z)` at `rows`.
pub(crate) fn residuals(data: &Dataset, beta: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&i| {
            let mut f = beta[0] + beta[1] * data.x[i];
            for (c, b) in data.controls.iter().zip(&beta[2..]) {
                f += b * c[i];
            }
            data.y[i].ln() - f
        })
        .collect()
}

/// Trains `(beta, gamma)`, `m` and the conditional score on each fold's
/// complement.
pub fn fit_nuisances(data: &Dataset, plan: &CrossFitPlan, config: &DreamConfig) -> Result<NuisanceSet> {
    if plan.n != data.n() {
        return Err(Error::Mismatch(format!("plan covers {} rows, data has {}", plan.n, data.n())));
    }
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|k| fit_fold(data, plan, config, k).map_err(|e| e.in_fold(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceSet { plan: plan.clone(), folds })
}

fn fit_fold(data: &Dataset, plan: &CrossFitPlan, config: &DreamConfig, k: usize) -> Result<FoldNuisance> {
    let rows = plan.train_rows(k);
    let (cols, names) = linear_design(data, &rows);
    let ly: Vec<f64> = rows.iter().map(|&i| data.y[i].ln()).collect();
    let beta = linalg::least_squares(&cols, &names, &ly)?;
    let u = residuals(data, &beta, &rows);
    let target: Vec<f64> = u.iter().map(|v| v.exp()).collect();
    let x: Vec<f64> = rows.iter().map(|&i| data.x[i]).collect();
    let z = controls_of(data, &rows);
    let m = learners::fit_positive_mean(&treatment_first(&x, &z), &target, &config.learner_for("dream_m", k))?;
    let score = learners::fit_conditional_score(&x, &z, &config.learner_for("dream_score", k))?;
    let mut validation = BTreeMap::new();
    validation.insert("m".to_string(), m.validation_mse);
    validation.insert("score".to_string(), score.validation_loss);
    Ok(FoldNuisance {
        fold: k,
        beta,
        m: Box::new(m),
        score: Box::new(score),
        train_rows: rows,
        validation,
    })
}

/// Per-observation ingredients of the score, evaluated with out-of-fold
/// nuisances.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreComponents {
    pub x: Vec<f64>,
    pub beta: Vec<f64>,
    pub exp_u: Vec<f64>,
    pub m: Vec<f64>,
    pub dm: Vec<f64>,
    pub s: Vec<f64>,
    pub clamp_hits: usize,
}

impl NuisanceSet {
    /// Errors if any observation's fold was used to train its nuisances.
    pub fn check_hygiene(&self) -> Result<()> {
        for f in &self.folds {
            if let Some(&i) = f.train_rows.iter().find(|&&i| self.plan.assignment[i] == f.fold) {
                return Err(Error::InvalidData(format!("row {i} trains the nuisances of its own fold {}", f.fold)));
            }
        }
        Ok(())
    }

    pub fn components(&self, data: &Dataset) -> ScoreComponents {
        let n = data.n();
        let mut c = ScoreComponents {
            x: data.x.clone(),
            beta: vec![0.0; n],
            exp_u: vec![0.0; n],
            m: vec![0.0; n],
            dm: vec![0.0; n],
            s: vec![0.0; n],
            clamp_hits: 0,
        };
        for f in &self.folds {
            let rows = self.plan.fold_rows(f.fold);
            let x: Vec<f64> = rows.iter().map(|&i| data.x[i]).collect();
            let z = controls_of(data, &rows);
            let u = residuals(data, &f.beta, &rows);
            let (m, dm) = f.m.eval(&x, &z);
            let s = f.score.eval(&x, &z);
            for (j, &i) in rows.iter().enumerate() {
                c.beta[i] = f.beta[1];
                c.exp_u[i] = u[j].exp();
                if m[j] < M_FLOOR || !m[j].is_finite() {
                    c.clamp_hits += 1;
                }
                c.m[i] = clamp_m(m[j]);
                c.dm[i] = dm[j];
                c.s[i] = s[j];
            }
        }
        c
    }
}

fn clamp_m(m: f64) -> f64 {
    if m.is_finite() {
        m.max(M_FLOOR)
    } else {
        M_FLOOR
    }
}

impl ScoreComponents {
    /// `beta + m'/m` per observation.
    pub fn plugin(&self) -> Vec<f64> {
        (0..self.x.len()).map(|i| self.beta[i] + self.dm[i] / self.m[i]).collect()
    }

    /// `-s/m * (exp(u) - m)` per observation.
    pub fn correction(&self) -> Vec<f64> {
        (0..self.x.len())
            .map(|i| -self.s[i] / self.m[i] * (self.exp_u[i] - self.m[i]))
            .collect()
    }

    /// The score without `-theta`.
    pub fn terms(&self) -> Vec<f64> {
        self.plugin().iter().zip(self.correction()).map(|(p, c)| p + c).collect()
    }
}

/// One observation's data.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: f64,
    pub x: f64,
    pub z: &'a [f64],
}

/// The score `phi(W; theta, nuisances)` for a single observation.
pub fn score_contribution(obs: &Observation<'_>, nuisance: &FoldNuisance, theta: f64) -> f64 {
    let mut fit = nuisance.beta[0] + nuisance.beta[1] * obs.x;
    for (b, z) in nuisance.beta[2..].iter().zip(obs.z) {
        fit += b * z;
    }
    let u = obs.y.ln() - fit;
    let z = Features {
        n: 1,
        d: obs.z.len(),
        data: obs.z.to_vec(),
    };
    let (m, dm) = nuisance.m.eval(&[obs.x], &z);
    let m = clamp_m(m[0]);
    let s = nuisance.score.eval(&[obs.x], &z)[0];
    let alpha = -s / m;
    nuisance.beta[1] + dm[0] / m - theta + alpha * (u.exp() - m)
}

/// Assembles the report from score terms (the score plus `theta`).
pub(crate) fn report_from_terms(method: &str, terms: &[f64], level: f64) -> Result<EstimateReport> {
    if let Some(i) = terms.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFiniteMoment(format!("score of observation {i} is not finite")));
    }
    let theta = pairwise_sum(terms) / terms.len() as f64;
    let scores: Vec<f64> = terms.iter().map(|t| t - theta).collect();
    EstimateReport::from_scores(method, theta, scores, level)
}

/// Cross-fitted debiased estimate of the average arithmetic elasticity of
/// `E[Y | x, z]` with respect to the treatment column. A binary treatment is
/// routed to [`baseline::manning_binary`].
pub fn estimate(data: &Dataset, k: usize, config: &DreamConfig) -> Result<EstimateReport> {
    data.validate()?;
    config.learner.validate()?;
    if data.is_binary_x() {
        let mut r = baseline::manning_binary(data)?;
        r.notices.push("binary treatment: routed to the Manning arithmetic percentage change".into());
        r.seed = Some(config.seed);
        return Ok(r);
    }
    let plan = make_plan(data.n(), k, config.seed)?;
    let nuisances = fit_nuisances(data, &plan, config)?;
    nuisances.check_hygiene()?;
    let comps = nuisances.components(data);
    let mut report = report_from_terms("dream", &comps.terms(), config.level)?;
    report.k = Some(k);
    report.seed = Some(config.seed);
    let d = &mut report.diagnostics;
    d.fold_sizes = Some(plan.fold_sizes());
    d.clamp_hits = Some(comps.clamp_hits);
    let rate = comps.clamp_hits as f64 / data.n() as f64;
    d.clamp_rate = Some(rate);
    for f in &nuisances.folds {
        for (name, v) in &f.validation {
            d.validation_losses.entry(name.clone()).or_default().push(*v);
        }
    }
    d.fold_coefficients = Some(nuisances.folds.iter().map(|f| f.beta.clone()).collect());
    d.config_hash = Some(config.hash());
    d.dataset_hash = Some(data.content_hash());
    if rate > CLAMP_WARN_RATE {
        report.warnings.push(format!(
            "{:.1}% of conditional-mean predictions hit the floor {M_FLOOR}",
            100.0 * rate
        ));
    }
    let distinct = data.distinct_x();
    if distinct < MIN_DISTINCT_X {
        report.warnings.push(format!(
            "treatment has only {distinct} distinct values; the conditional density score is ill-posed, \
             consider the binary/discrete estimator"
        ));
    }
    Ok(report)
}

/// Nuisance direction perturbed by the orthogonality audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `m -> m + 0.1 t`
    M,
    /// `s -> s + 0.1 t`
    Score,
    /// slope coefficient `beta -> beta + t`, with `m` held fixed
    Beta,
}

/// Mean score along a one-parameter nuisance path, for the debiased score
/// and for the plug-in `beta + m'/m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub direction: Direction,
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub curvature: f64,
    pub plugin_values: Vec<f64>,
    pub plugin_slope: f64,
    pub plugin_curvature: f64,
}

const AUDIT_STEP: f64 = 0.1;

fn perturbed_mean(c: &ScoreComponents, dir: Direction, t: f64, theta: f64) -> (f64, f64) {
    let n = c.x.len();
    let mut full = Vec::with_capacity(n);
    let mut plug = Vec::with_capacity(n);
    for i in 0..n {
        let (mut beta, mut exp_u, mut m, mut s) = (c.beta[i], c.exp_u[i], c.m[i], c.s[i]);
        match dir {
            Direction::M => m += AUDIT_STEP * t,
            Direction::Score => s += AUDIT_STEP * t,
            Direction::Beta => {
                beta += t;
                exp_u *= (-t * c.x[i]).exp();
            }
        }
        let p = beta + c.dm[i] / m;
        plug.push(p - theta);
        full.push(p - theta - s / m * (exp_u - m));
    }
    (stats::mean(&full), stats::mean(&plug))
}

/// Evaluates the mean score at `theta_hat` along `nuisance + t h` for each
/// `t` in `t_grid` and fits a quadratic; `slope` is the derivative at 0 and
/// `curvature` the second derivative.
pub fn orthogonality_audit(
    data: &Dataset,
    nuisance: &NuisanceSet,
    direction: Direction,
    t_grid: &[f64],
) -> Result<AuditResult> {
    if t_grid.len() < 3 {
        return Err(domain("the audit needs at least three grid points"));
    }
    let comps = nuisance.components(data);
    audit_components(&comps, direction, t_grid)
}

/// As [`orthogonality_audit`] on precomputed components.
pub fn audit_components(comps: &ScoreComponents, direction: Direction, t_grid: &[f64]) -> Result<AuditResult> {
    let theta = stats::mean(&comps.terms());
    let (values, plugin_values): (Vec<f64>, Vec<f64>) =
        t_grid.iter().map(|&t| perturbed_mean(comps, direction, t, theta)).unzip();
    let q = stats::quadratic_fit(t_grid, &values);
    let qp = stats::quadratic_fit(t_grid, &plugin_values);
    Ok(AuditResult {
        direction,
        t_grid: t_grid.to_vec(),
        values,
        slope: q[1],
        curvature: 2.0 * q[2],
        plugin_values,
        plugin_slope: qp[1],
        plugin_curvature: 2.0 * qp[2],
    })
}

/// Fitted nuisances exposed for audits and reuse, e.g. the models per fold.
pub fn fit(data: &Dataset, k: usize, config: &DreamConfig) -> Result<NuisanceSet> {
    data.validate()?;
    let plan = make_plan(data.n(), k, config.seed)?;
    fit_nuisances(data, &plan, config)
}
