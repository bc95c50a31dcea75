//! Monte Carlo replication harness: bias, RMSE and interval coverage of
//! each method against the oracle of the generating process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{fmt_f64, Dataset};
use crate::dgp::{
    simulate_cross_section, simulate_triangular_iv, ElasticityOracle, McEstimate, PopulationSpec, TriangularIVSpec,
};
use crate::dream::DreamConfig;
use crate::error::{domain, Result};
use crate::learners::LearnerConfig;
use crate::methods::{run_method, Method};
use crate::rng::derive_indexed;
use crate::stats;

/// Minimum number of replications accepted by [`CoverageConfig::validate`].
pub const MIN_REPLICATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum DgpSpec {
    CrossSection(PopulationSpec),
    Triangular(TriangularIVSpec),
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::CrossSection(s) => s.validate(),
            DgpSpec::Triangular(s) => s.validate(),
        }
    }

    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            DgpSpec::CrossSection(s) => simulate_cross_section(s, n, seed),
            DgpSpec::Triangular(s) => simulate_triangular_iv(s, n, seed),
        }
    }

    pub fn oracle(&self, draws: usize, seed: u64) -> Result<McEstimate> {
        match self {
            DgpSpec::CrossSection(s) => s.true_average_arithmetic_elasticity(draws, seed),
            DgpSpec::Triangular(s) => s.true_average_arithmetic_elasticity(draws, seed),
        }
    }
}

fn default_folds() -> usize {
    5
}
fn default_level() -> f64 {
    0.05
}
fn default_oracle_draws() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    pub replications: usize,
    pub methods: Vec<Method>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "LearnerConfig::fast")]
    pub learner: LearnerConfig,
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.learner.validate()?;
        if self.replications < MIN_REPLICATIONS {
            return Err(domain(format!(
                "coverage needs at least {MIN_REPLICATIONS} replications, got {}",
                self.replications
            )));
        }
        if self.methods.is_empty() {
            return Err(domain("no methods requested"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(domain(format!("level must lie in (0,1), got {}", self.level)));
        }
        if self.n == 0 || self.oracle_draws == 0 {
            return Err(domain("n and oracle_draws must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    pub theta: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub covered: Option<bool>,
    pub error: Option<String>,
    /// Content hash of the simulated dataset, when simulation succeeded.
    pub dataset_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub sd_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub theta0: McEstimate,
    pub methods: Vec<MethodSummary>,
    pub records: Vec<ReplicationRecord>,
}

/// Runs every method on `replications` independent datasets. A failing
/// replication is recorded and the run continues.
pub fn run_coverage(config: &CoverageConfig) -> Result<CoverageSummary> {
    config.validate()?;
    run_coverage_unchecked(config)
}

/// As [`run_coverage`] without the minimum replication count.
pub fn run_coverage_unchecked(config: &CoverageConfig) -> Result<CoverageSummary> {
    let theta0 = config.dgp.oracle(config.oracle_draws, derive_indexed(config.seed, "coverage_oracle", 0))?;
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r, theta0.value))
        .collect();
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();
    let methods = config
        .methods
        .iter()
        .map(|&m| summarise(m, &records, theta0.value))
        .collect();
    Ok(CoverageSummary { theta0, methods, records })
}

fn replicate(config: &CoverageConfig, r: usize, theta0: f64) -> Vec<ReplicationRecord> {
    let data = config.dgp.simulate(config.n, derive_indexed(config.seed, "coverage_data", r as u64));
    let dataset_hash = data.as_ref().ok().map(Dataset::content_hash);
    config
        .methods
        .iter()
        .map(|&method| {
            let est = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                let dc = DreamConfig {
                    level: config.level,
                    seed: derive_indexed(config.seed, "coverage_fit", r as u64),
                    learner: config.learner.clone(),
                };
                run_method(method, d, config.folds, &dc).map_err(|e| e.to_string())
            });
            match est {
                Ok(rep) => ReplicationRecord {
                    replication: r,
                    method,
                    theta: Some(rep.theta),
                    se: Some(rep.se),
                    ci: Some(rep.ci),
                    covered: Some(rep.covers(theta0)),
                    error: None,
                    dataset_hash: dataset_hash.clone(),
                },
                Err(e) => ReplicationRecord {
                    replication: r,
                    method,
                    theta: None,
                    se: None,
                    ci: None,
                    covered: None,
                    error: Some(e),
                    dataset_hash: dataset_hash.clone(),
                },
            }
        })
        .collect()
}

fn summarise(method: Method, records: &[ReplicationRecord], theta0: f64) -> MethodSummary {
    let mine: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == method).collect();
    let ok: Vec<&ReplicationRecord> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
    let thetas: Vec<f64> = ok.iter().filter_map(|r| r.theta).collect();
    let ses: Vec<f64> = ok.iter().filter_map(|r| r.se).collect();
    let errs: Vec<f64> = thetas.iter().map(|t| t - theta0).collect();
    let covered = ok.iter().filter(|r| r.covered == Some(true)).count();
    let nan_if_empty = |v: f64| if ok.is_empty() { f64::NAN } else { v };
    MethodSummary {
        method,
        successes: ok.len(),
        failures: mine.len() - ok.len(),
        bias: nan_if_empty(stats::mean(&errs)),
        rmse: nan_if_empty(stats::mean(&errs.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt()),
        coverage: nan_if_empty(covered as f64 / ok.len().max(1) as f64),
        mean_se: nan_if_empty(stats::mean(&ses)),
        sd_theta: nan_if_empty(if thetas.len() > 1 { stats::std_dev(&thetas) } else { 0.0 }),
    }
}

impl CoverageSummary {
    /// Long-format per-replication table for plotting.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("replication,method,theta,se,ci_lo,ci_hi,covered,error\n");
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.replication,
                r.method,
                opt(r.theta),
                opt(r.se),
                opt(r.ci.map(|c| c[0])),
                opt(r.ci.map(|c| c[1])),
                r.covered.map(|c| c.to_string()).unwrap_or_default(),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,successes,failures,bias,rmse,coverage,mean_se,sd_theta\n");
        for m in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                m.method,
                m.successes,
                m.failures,
                fmt_f64(m.bias),
                fmt_f64(m.rmse),
                fmt_f64(m.coverage),
                fmt_f64(m.mean_se),
                fmt_f64(m.sd_theta)
            ));
        }
        out
    }

    /// SHA-256 over the per-replication dataset hashes in replication order.
    pub fn datasets_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut last = None;
        for r in &self.records {
            if last == Some(r.replication) {
                continue;
            }
            last = Some(r.replication);
            h.update(r.dataset_hash.as_deref().unwrap_or("-").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{CoefLaw, Convention, RegressorLaw};

    fn degenerate(methods: Vec<Method>, law: RegressorLaw, convention: Convention) -> CoverageConfig {
        CoverageConfig {
            dgp: DgpSpec::CrossSection(
                PopulationSpec::new(CoefLaw::Degenerate { a: 0.2, eps: 0.7 }, law).with_convention(convention),
            ),
            n: 100,
            replications: MIN_REPLICATIONS,
            methods,
            folds: 2,
            level: 0.05,
            seed: 3,
            learner: LearnerConfig { max_epochs: 50, ..LearnerConfig::fast() },
            oracle_draws: 10,
        }
    }

    #[test]
    fn degenerate_fixture_has_no_bias() {
        let c = degenerate(
            vec![Method::Ols, Method::Ppml, Method::Dream],
            RegressorLaw::LogUniform { lo: 1.0, hi: 5.0 },
            Convention::Elasticity,
        );
        let s = run_coverage(&c).unwrap();
        assert!((s.theta0.value - 0.7).abs() < 1e-12);
        for m in &s.methods {
            assert_eq!(m.failures, 0, "{:?}", m.method);
            assert!(m.bias.abs() <= 1e-6, "{:?} bias {}", m.method, m.bias);
        }
        assert_eq!(s.records.len(), 3 * MIN_REPLICATIONS);
    }

    #[test]
    fn binary_degenerate_and_failures_are_recorded() {
        let c = degenerate(
            vec![Method::Manning, Method::Tsls],
            RegressorLaw::Bernoulli { p: 0.5 },
            Convention::SemiElasticity,
        );
        let s = run_coverage(&c).unwrap();
        // exp(0.7) - 1 is the arithmetic percentage change of the binary design
        let manning = s.method(Method::Manning).unwrap();
        assert!(manning.successes > 0);
        assert!((manning.bias + s.theta0.value - (0.7f64.exp() - 1.0)).abs() < 1e-9);
        let tsls = s.method(Method::Tsls).unwrap();
        assert_eq!(tsls.failures, MIN_REPLICATIONS);
        assert!(s.records_csv().lines().count() == 2 * MIN_REPLICATIONS + 1);
    }

    #[test]
    fn rejects_few_replications() {
        let mut c = degenerate(vec![Method::Ols], RegressorLaw::Fixed { x: 2.0 }, Convention::Elasticity);
        c.replications = 10;
        assert!(run_coverage(&c).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = degenerate(vec![Method::Ols, Method::DreamIv], RegressorLaw::Fixed { x: 2.0 }, Convention::Elasticity);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CoverageConfig>(&j).unwrap(), c);
        let bad = j.replacen("\"n\":", "\"bogus\":1,\"n\":", 1);
        assert!(serde_json::from_str::<CoverageConfig>(&bad).is_err());
    }
}
