//! Random-coefficient data-generating processes and their exact or Monte
//! Carlo ground truth.
//!
//! Every individual carries an intercept `a` and an elasticity `eps`, and
//! `log Y(x) = a + eps * t(x)` where `t(x) = log x` (elasticity convention) or
//! `t(x) = x` (semi-elasticity convention).

mod oracle;
mod simulate;
mod spec;
mod twins;

pub use oracle::{
    arithmetic_elasticity_slope, gaussian_closed_form_elasticity, mvpf, power_mean,
    power_mean_elasticity_mc, wedge, ElasticityOracle, McEstimate, PowerIndex,
};
pub use simulate::{simulate_cross_section, simulate_triangular_iv, simulate_triangular_iv_with_latents, Latents};
pub use spec::{
    Affine, CoefGivenV, CoefLaw, Convention, FirstStage, InstrumentLaw, NoiseLaw, PopulationSpec,
    RegressorLaw, ResidualLaw, TriangularIVSpec,
};
pub use twins::{prop3_twin_dgps, prop3_twin_triangular, TwinDgps};
