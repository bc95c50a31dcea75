use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use elast_core::coverage::{run_coverage, CoverageSummary};
use elast_core::inference::{compare_reports, summarize_batch, ComparisonResult};
use elast_core::methods::run_method;
use elast_core::{ColumnBinding, Dataset, DreamConfig, EstimateReport};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{
    self, CompareConfig, CoverageRunConfig, EstimateConfig, SimulateConfig, SCHEMA_VERSION,
};
use crate::failure::Failure;

/// Provenance stamped on every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateOutput {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub config: SimulateConfig,
    pub data_file: String,
    /// `null` when the oracle is not available for the spec.
    pub oracle: Option<elast_core::dgp::McEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateOutput {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub config: EstimateConfig,
    pub report: EstimateReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareOutput {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub method_a: String,
    pub method_b: String,
    pub result: ComparisonResult,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchEntry {
    pub a: PathBuf,
    pub b: PathBuf,
    pub dataset_hash: String,
    pub result: ComparisonResult,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchOutput {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub label: String,
    pub summary: elast_core::inference::BatchSummary,
    pub comparisons: Vec<BatchEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CoverageOutput {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub config: CoverageRunConfig,
    pub records_file: String,
    pub summary_file: String,
    pub summary: CoverageSummary,
}

pub struct ColumnOverrides {
    pub y: Option<String>,
    pub x: Option<String>,
    pub controls: Option<Vec<String>>,
    pub instruments: Option<Vec<String>>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serialises");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn required_out(out: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    out.ok_or_else(|| Failure::User(anyhow!("{what} needs an output path (--out or `out` in the config)")))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

pub fn simulate(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg: SimulateConfig = config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = required_out(out.or_else(|| cfg.out.as_ref().map(|p| config::resolve(path, p))), "simulate")?;
    cfg.out = None;
    cfg.dgp.validate()?;
    let data = cfg.dgp.simulate(cfg.n, cfg.seed)?;
    let (oracle, oracle_error) = match cfg.dgp.oracle(cfg.oracle_draws, elast_core::rng::derive_seed(cfg.seed, "oracle")) {
        Ok(o) => (Some(o), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let csv = data.to_csv_string();
    write_file(&out, &csv)?;
    let meta = SimulateOutput {
        stamp: Stamp {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            config_hash: config::config_hash(&cfg),
            dataset_hash: data.content_hash(),
        },
        data_file: file_name(&out),
        config: cfg,
        oracle,
        oracle_error,
    };
    write_file(&sidecar(&out), &to_json(&meta))
}

pub fn estimate(path: &Path, seed: Option<u64>, out: Option<PathBuf>, over: ColumnOverrides) -> Result<(), Failure> {
    let mut cfg: EstimateConfig = config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let c = &mut cfg.columns;
    if let Some(y) = over.y {
        c.y = y;
    }
    if let Some(x) = over.x {
        c.x = x;
    }
    if let Some(z) = over.controls {
        c.controls = z;
    }
    if let Some(iv) = over.instruments {
        c.instruments = iv;
    }
    let out = out.or_else(|| cfg.out.as_ref().map(|p| config::resolve(path, p)));
    let scores_out = cfg.scores_out.as_ref().map(|p| config::resolve(path, p));
    cfg.out = None;
    cfg.scores_out = None;
    cfg.learner.validate()?;

    let binding = ColumnBinding {
        y: cfg.columns.y.clone(),
        x: cfg.columns.x.clone(),
        controls: cfg.columns.controls.clone(),
        instruments: cfg.columns.instruments.clone(),
    };
    let data_path = config::resolve(path, &cfg.data);
    let data = Dataset::load_csv(&data_path, Some(&binding))
        .map_err(|e| Failure::User(anyhow::Error::new(e).context(format!("loading {}", data_path.display()))))?;
    let dc = DreamConfig {
        level: cfg.level,
        seed: cfg.seed,
        learner: cfg.learner.clone(),
    };
    let mut report = run_method(cfg.method, &data, cfg.folds, &dc)?;
    let dataset_hash = data.content_hash();
    report.diagnostics.dataset_hash = Some(dataset_hash.clone());
    if cfg.method.is_cross_fitted() {
        report.seed = Some(cfg.seed);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for n in &report.notices {
        eprintln!("notice: {n}");
    }
    if let Some(p) = scores_out {
        write_file(&p, &report.scores_csv())?;
    }
    let output = EstimateOutput {
        stamp: Stamp {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            config_hash: config::config_hash(&cfg),
            dataset_hash,
        },
        config: cfg,
        report,
    };
    emit(out.as_deref(), &to_json(&output))
}

fn load_report(path: &Path) -> Result<EstimateOutput, Failure> {
    let r: EstimateOutput = read_json(path)?;
    if r.stamp.schema_version != SCHEMA_VERSION {
        return Err(Failure::User(anyhow!(
            "{} has schema_version {}, expected {SCHEMA_VERSION}",
            path.display(),
            r.stamp.schema_version
        )));
    }
    Ok(r)
}

fn compare_pair(a_path: &Path, b_path: &Path, cfg: &CompareConfig) -> Result<(EstimateOutput, EstimateOutput, ComparisonResult), Failure> {
    let a = load_report(a_path)?;
    let b = load_report(b_path)?;
    if a.stamp.dataset_hash != b.stamp.dataset_hash {
        return Err(Failure::User(anyhow!(
            "reports were computed on different datasets: {} has {}, {} has {}",
            a_path.display(),
            a.stamp.dataset_hash,
            b_path.display(),
            b.stamp.dataset_hash
        )));
    }
    let result = compare_reports(&a.report, &b.report, cfg.convention, cfg.level)?;
    Ok((a, b, result))
}

pub fn compare(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg: CompareConfig = config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.or_else(|| cfg.out.as_ref().map(|p| config::resolve(path, p)));
    cfg.out = None;

    if !cfg.batch.is_empty() {
        if cfg.a.is_some() || cfg.b.is_some() {
            return Err(Failure::User(anyhow!("give either `a`/`b` or `batch`, not both")));
        }
        let mut comparisons = Vec::with_capacity(cfg.batch.len());
        for pair in &cfg.batch {
            let (a, b) = (config::resolve(path, &pair.a), config::resolve(path, &pair.b));
            let (ra, _, result) = compare_pair(&a, &b, &cfg)?;
            comparisons.push(BatchEntry {
                a: pair.a.clone(),
                b: pair.b.clone(),
                dataset_hash: ra.stamp.dataset_hash,
                result,
            });
        }
        let results: Vec<ComparisonResult> = comparisons.iter().map(|c| c.result.clone()).collect();
        let summary = summarize_batch(&results)?.with_label(cfg.label.clone());
        let csv = summary.to_csv();
        let h = hash_lines(comparisons.iter().map(|c| c.dataset_hash.as_str()));
        let output = BatchOutput {
            stamp: Stamp {
                schema_version: SCHEMA_VERSION,
                seed: cfg.seed,
                config_hash: config::config_hash(&cfg),
                dataset_hash: h,
            },
            label: cfg.label.clone(),
            summary,
            comparisons,
        };
        return match out {
            Some(p) => {
                write_file(&p, &csv)?;
                write_file(&sidecar(&p), &to_json(&output))
            }
            None => emit(None, &csv),
        };
    }

    let (a, b) = match (&cfg.a, &cfg.b) {
        (Some(a), Some(b)) => (config::resolve(path, a), config::resolve(path, b)),
        _ => return Err(Failure::User(anyhow!("compare needs both `a` and `b` report paths"))),
    };
    let (ra, rb, result) = compare_pair(&a, &b, &cfg)?;
    let output = CompareOutput {
        stamp: Stamp {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            config_hash: config::config_hash(&cfg),
            dataset_hash: ra.stamp.dataset_hash,
        },
        method_a: ra.report.method,
        method_b: rb.report.method,
        result,
    };
    emit(out.as_deref(), &to_json(&output))
}

/// Combined hash of several dataset hashes, in order.
fn hash_lines<'a>(items: impl Iterator<Item = &'a str>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in items {
        h.update(s.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn coverage(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg: CoverageRunConfig = config::load(path)?;
    if let Some(s) = seed {
        cfg.study.seed = s;
    }
    let out = required_out(out.or_else(|| cfg.out.as_ref().map(|p| config::resolve(path, p))), "coverage")?;
    cfg.out = None;
    let summary = run_coverage(&cfg.study)?;
    let records_path = sibling(&out, "_records.csv");
    let summary_path = sibling(&out, "_summary.csv");
    write_file(&records_path, &summary.records_csv())?;
    write_file(&summary_path, &summary.summary_csv())?;
    for m in &summary.methods {
        if m.failures > 0 {
            eprintln!("warning: {} failed on {} of {} replications", m.method, m.failures, m.failures + m.successes);
        }
    }
    let output = CoverageOutput {
        stamp: Stamp {
            schema_version: SCHEMA_VERSION,
            seed: cfg.study.seed,
            config_hash: config::config_hash(&cfg),
            dataset_hash: summary.datasets_hash(),
        },
        records_file: file_name(&records_path),
        summary_file: file_name(&summary_path),
        config: cfg,
        summary,
    };
    write_file(&sidecar(&out), &to_json(&output))
}
