//! Shared fixtures for the criterion benchmarks.

use elast_core::dgp::{simulate_cross_section, CoefLaw, NoiseLaw, PopulationSpec, RegressorLaw};
use elast_core::learners::LearnerConfig;
use elast_core::{Dataset, DreamConfig};

/// Gaussian random-elasticity population with log-uniform prices on `[1, e^2]`.
pub fn wedge_spec() -> PopulationSpec {
    PopulationSpec::new(
        CoefLaw::GaussianIndep {
            a_const: 0.0,
            eps_mean: 0.5,
            eps_var: 0.25,
        },
        RegressorLaw::LogUniform {
            lo: 1.0,
            hi: std::f64::consts::E.powi(2),
        },
    )
    .with_noise(NoiseLaw::Gaussian { sd: 0.1 })
}

pub fn wedge_data(n: usize, seed: u64) -> Dataset {
    simulate_cross_section(&wedge_spec(), n, seed).expect("valid fixture")
}

/// Small learner used so a full cross-fit fits in a benchmark iteration.
pub fn bench_learner() -> LearnerConfig {
    LearnerConfig {
        max_epochs: 200,
        ..LearnerConfig::fast()
    }
}

pub fn bench_dream_config() -> DreamConfig {
    DreamConfig {
        learner: bench_learner(),
        ..DreamConfig::default()
    }
}
