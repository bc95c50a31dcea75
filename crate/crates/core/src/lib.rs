//! Estimation of arithmetic-mean (semi-)elasticities from log-outcome
//! models with heterogeneous individual elasticities.

pub mod baseline;
pub mod data;
pub mod dgp;
pub mod dream;
pub mod dream_iv;
pub mod inference;
mod error;
pub mod learners;
pub mod methods;
pub mod coverage;
mod linalg;
pub mod report;
pub mod rng;
pub mod stats;

pub use baseline::{EstimatorTag, FitResult, FitSummary};
pub use dream::DreamConfig;
pub use data::{ColumnBinding, Dataset};
pub use error::{Error, Result};
pub use report::{Diagnostics, EstimateReport};
