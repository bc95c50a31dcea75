//! On-disk run configurations. Every file carries `schema_version` and
//! unknown fields are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use elast_core::coverage::{CoverageConfig, DgpSpec};
use elast_core::inference::Convention;
use elast_core::learners::LearnerConfig;
use elast_core::methods::Method;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

fn default_oracle_draws() -> usize {
    1_000_000
}
fn default_folds() -> usize {
    5
}
fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub dgp: DgpSpec,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Header names for each dataset role.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    #[serde(default = "Columns::default_y")]
    pub y: String,
    #[serde(default = "Columns::default_x")]
    pub x: String,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
}

impl Columns {
    fn default_y() -> String {
        "y".into()
    }
    fn default_x() -> String {
        "x".into()
    }
}

impl Default for Columns {
    fn default() -> Self {
        Columns {
            y: Self::default_y(),
            x: Self::default_x(),
            controls: Vec::new(),
            instruments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub schema_version: u32,
    pub data: PathBuf,
    pub method: Method,
    #[serde(default)]
    pub columns: Columns,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Optional per-observation score table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPair {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub schema_version: u32,
    /// Single comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<PathBuf>,
    /// Batch mode: one comparison per pair, summarised as one table row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch: Vec<ReportPair>,
    #[serde(default = "CompareConfig::default_label")]
    pub label: String,
    #[serde(default = "CompareConfig::default_convention")]
    pub convention: Convention,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl CompareConfig {
    fn default_label() -> String {
        "comparison".into()
    }
    fn default_convention() -> Convention {
        Convention::Continuous
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageRunConfig {
    pub schema_version: u32,
    pub study: CoverageConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        })*
    };
}
versioned!(SimulateConfig, EstimateConfig, CompareConfig, CoverageRunConfig);

/// Reads and validates a config file.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: T = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        bail!(
            "config {} has schema_version {}, this build reads {SCHEMA_VERSION}",
            path.display(),
            cfg.schema_version()
        );
    }
    Ok(cfg)
}

/// SHA-256 of the compact JSON form of the effective config.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serialises");
    hex::encode(Sha256::digest(&json))
}

/// Paths inside a config are relative to the config file.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}
