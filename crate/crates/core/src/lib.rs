//! Bayesian quantile factor-augmented vector autoregressions.
//!
//! Quantile-specific latent factors are extracted from a multicountry panel
//! and evolve jointly with observed global series as a VAR. Estimation runs
//! either a full Gibbs sampler or a two-step variational approximation, and
//! the posterior feeds tail forecasts, generalized impulse responses,
//! variance decompositions and connectedness networks.

pub mod config;
pub mod distributions;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod forecast;
pub mod gibbs;
pub mod linalg;
pub mod model;
pub mod panel;
pub mod posterior;
pub mod rng;
pub mod shrinkage;
pub mod simulate;
pub mod statespace;
pub mod structural;
pub mod sv;
pub mod vb;

pub use error::{Error, Result};
pub use exec::Execution;

use config::{Method, ModelConfig};
use panel::PanelData;
use posterior::PosteriorDraws;

/// Estimate with the method named in the configuration.
pub fn estimate(panel: &PanelData, cfg: &ModelConfig) -> Result<PosteriorDraws> {
    match cfg.method {
        Method::Mcmc => gibbs::run_gibbs(panel, cfg),
        Method::Vb => vb::run_vb(panel, cfg),
    }
}
