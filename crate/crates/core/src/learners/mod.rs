//! Nuisance learners: a feed-forward regressor with exact input gradients,
//! denoising score matching for conditional and marginal density scores,
//! and a classifier-based density ratio.
//!
//! Every learner is deterministic given `LearnerConfig::seed` and trains on
//! a single thread.

mod config;
mod mlp;
mod ratio;
mod regression;
mod score;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::LearnerConfig;
pub use mlp::{Activation, Dense, Mlp};
pub use ratio::{fit_density_ratio, RatioModel, RATIO_CLIP};
pub use regression::{fit_positive_mean, fit_regression, gradient_wrt_x, RegressorModel, TargetTransform};
pub use score::{fit_conditional_score, fit_marginal_score, ScoreModel};

/// Version tag written into every serialised model.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn from_columns(cols: &[&[f64]]) -> Result<Self> {
        let n = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Mismatch("feature columns differ in length".into()));
        }
        let d = cols.len();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(cols.iter().map(|c| c[i]));
        }
        Ok(Features { n, d, data })
    }

    /// A matrix with `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        Features { n, d: 0, data: Vec::new() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.d + j]).collect()
    }

    /// Rows selected by `idx`.
    pub fn select(&self, idx: &[usize]) -> Features {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Features { n: idx.len(), d: self.d, data }
    }

    /// Appends `col` as a new last column.
    pub fn with_column(&self, col: &[f64]) -> Features {
        let d = self.d + 1;
        let mut data = Vec::with_capacity(self.n * d);
        for (i, c) in col.iter().enumerate().take(self.n) {
            data.extend_from_slice(self.row(i));
            data.push(*c);
        }
        Features { n: self.n, d, data }
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("{what} contain non-finite entries")));
        }
        Ok(())
    }
}

/// Grid spacing for standardised inputs. Snapping to it makes affinely
/// equivalent feature columns produce bit-identical network inputs.
const GRID: f64 = 1.0 / (1u64 << 36) as f64;

/// Per-column affine standardisation `(v - mean) / scale`, rounded to a
/// fine grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(f: &Features) -> Self {
        let mut mean = Vec::with_capacity(f.d);
        let mut scale = Vec::with_capacity(f.d);
        for j in 0..f.d {
            let c = f.column(j);
            let (m, s) = moments(&c);
            mean.push(m);
            scale.push(s);
        }
        Standardizer { mean, scale }
    }

    pub fn apply_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend(
            row.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, m), s)| ((v - m) / s / GRID).round() * GRID),
        );
    }

    pub fn apply(&self, f: &Features) -> Vec<f64> {
        let mut out = Vec::with_capacity(f.data.len());
        for i in 0..f.n {
            self.apply_row(f.row(i), &mut out);
        }
        out
    }
}

/// Mean and a usable scale (the standard deviation, or 1 for a constant
/// column).
pub(crate) fn moments(v: &[f64]) -> (f64, f64) {
    let m = crate::stats::mean(v);
    let s = crate::stats::std_dev(v);
    if s > 1e-12 * (m.abs() + 1.0) {
        (m, s)
    } else {
        (m, 1.0)
    }
}
